#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oracle {

Mat naive_softmax(const Mat& logits, Axis axis) {
  Mat out(logits.rows(), logits.cols());
  if (axis == Axis::kOverColumns) {
    for (long i = 0; i < logits.rows(); ++i) {
      long double m = logits(i, 0);
      for (long j = 1; j < logits.cols(); ++j) m = std::max<long double>(m, logits(i, j));
      long double z = 0;
      for (long j = 0; j < logits.cols(); ++j) z += std::exp(static_cast<long double>(logits(i, j)) - m);
      for (long j = 0; j < logits.cols(); ++j)
        out(i, j) = static_cast<double>(std::exp(static_cast<long double>(logits(i, j)) - m) / z);
    }
  } else {
    for (long j = 0; j < logits.cols(); ++j) {
      long double m = logits(0, j);
      for (long i = 1; i < logits.rows(); ++i) m = std::max<long double>(m, logits(i, j));
      long double z = 0;
      for (long i = 0; i < logits.rows(); ++i) z += std::exp(static_cast<long double>(logits(i, j)) - m);
      for (long i = 0; i < logits.rows(); ++i)
        out(i, j) = static_cast<double>(std::exp(static_cast<long double>(logits(i, j)) - m) / z);
    }
  }
  return out;
}

Mat naive_attention(const Mat& queries, const Mat& keys, const Mat& values, double scale, Axis axis) {
  if (queries.cols() != keys.cols() || keys.rows() != values.rows())
    throw std::invalid_argument("naive_attention: shape mismatch");
  Mat logits(queries.rows(), keys.rows());
  for (long i = 0; i < queries.rows(); ++i)
    for (long j = 0; j < keys.rows(); ++j) {
      long double acc = 0;
      for (long c = 0; c < queries.cols(); ++c) acc += static_cast<long double>(queries(i, c)) * keys(j, c);
      logits(i, j) = static_cast<double>(acc) * scale;
    }
  const Mat a = naive_softmax(logits, axis);
  Mat out(queries.rows(), values.cols());
  for (long i = 0; i < queries.rows(); ++i)
    for (long c = 0; c < values.cols(); ++c) {
      long double acc = 0;
      for (long j = 0; j < keys.rows(); ++j) acc += static_cast<long double>(a(i, j)) * values(j, c);
      out(i, c) = static_cast<double>(acc);
    }
  return out;
}

Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& x, double step) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (long i = 0; i < x.rows(); ++i)
    for (long j = 0; j < x.cols(); ++j) {
      const double keep = probe(i, j);
      probe(i, j) = keep + step;
      const double up = f(probe);
      probe(i, j) = keep - step;
      const double dn = f(probe);
      probe(i, j) = keep;
      g(i, j) = (up - dn) / (2 * step);
    }
  return g;
}

std::vector<double> brute_topk_weights(const Mat& scores, int k) {
  if (k < 1 || k > scores.cols()) throw std::invalid_argument("brute_topk_weights: bad k");
  std::vector<double> out;
  for (long i = 0; i < scores.rows(); ++i) {
    std::vector<double> row(scores.cols());
    for (long j = 0; j < scores.cols(); ++j) row[static_cast<std::size_t>(j)] = scores(i, j);
    std::sort(row.begin(), row.end(), std::greater<>());
    double s = 0;
    for (int j = 0; j < k; ++j) s += row[static_cast<std::size_t>(j)];
    out.push_back(s);
  }
  return out;
}

std::vector<int> brute_select(const std::vector<double>& weights, int n) {
  std::vector<int> idx(weights.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (weights[static_cast<std::size_t>(a)] != weights[static_cast<std::size_t>(b)])
      return weights[static_cast<std::size_t>(a)] > weights[static_cast<std::size_t>(b)];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

Mat explicit_integration(const std::vector<Mat>& shots, const Mat& weights) {
  const long n = shots.front().rows(), d = shots.front().cols();
  Mat out = Mat::Zero(n, d);
  for (long i = 0; i < n; ++i) {
    double m = weights(i, 0);
    for (long s = 1; s < weights.cols(); ++s) m = std::max(m, weights(i, s));
    double z = 0;
    for (long s = 0; s < weights.cols(); ++s) z += std::exp(weights(i, s) - m);
    for (long s = 0; s < weights.cols(); ++s) {
      const double w = std::exp(weights(i, s) - m) / z;
      for (long c = 0; c < d; ++c) out(i, c) += w * shots[static_cast<std::size_t>(s)](i, c);
    }
  }
  return out;
}

namespace {

std::vector<double> dense_relu(const std::vector<double>& x, const Mat& w, const Mat& b, bool rectify) {
  std::vector<double> y(static_cast<std::size_t>(w.cols()));
  for (long o = 0; o < w.cols(); ++o) {
    double acc = b(0, o);
    for (long i = 0; i < w.rows(); ++i) acc += x[static_cast<std::size_t>(i)] * w(i, o);
    y[static_cast<std::size_t>(o)] = rectify ? std::max(0.0, acc) : acc;
  }
  return y;
}

}  // namespace

std::vector<double> naive_nlf(const std::vector<double>& roi, const std::vector<double>& proto,
                              const NlfWeights& w) {
  const std::size_t n = roi.size();
  std::vector<double> prod(n), diff(n), cat;
  for (std::size_t i = 0; i < n; ++i) {
    prod[i] = roi[i] * proto[i];
    diff[i] = roi[i] - proto[i];
  }
  cat = roi;
  cat.insert(cat.end(), proto.begin(), proto.end());
  std::vector<double> all = dense_relu(prod, w.f1_w, w.f1_b, true);
  const auto b = dense_relu(diff, w.f2_w, w.f2_b, true);
  const auto c = dense_relu(cat, w.f3_w, w.f3_b, true);
  all.insert(all.end(), b.begin(), b.end());
  all.insert(all.end(), c.begin(), c.end());
  all.insert(all.end(), roi.begin(), roi.end());
  return dense_relu(all, w.agg_w, w.agg_b, false);
}

double pr_integral(const std::vector<int>& hits, int ground_truth) {
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i];
    rec.push_back(static_cast<double>(tp) / ground_truth);
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec[i] == prev_r) continue;
    double best = 0;
    for (std::size_t j = i; j < prec.size(); ++j) best = std::max(best, prec[j]);
    ap += (rec[i] - prev_r) * best;
    prev_r = rec[i];
  }
  return ap;
}

}  // namespace oracle
