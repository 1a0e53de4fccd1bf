#include "fpd/query_transfer.hpp"

#include "fpd/error.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace fpd::transfer {

int default_topk(int hw) { return std::max(1, hw / 4); }

double topk_sum(std::span<const double> row, int k, std::vector<double>* retained) {
  std::vector<double> v(row.begin(), row.end());
  std::partial_sort(v.begin(), v.begin() + k, v.end(), std::greater<>());
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += v[static_cast<std::size_t>(j)];
  if (retained) retained->assign(v.begin(), v.begin() + k);
  return s;
}

namespace {

Matrix stack_queries(std::span<const FeatureQuerySet> base, std::vector<ClassId>& owner,
                     std::vector<int>& row_in_class) {
  if (base.empty()) throw ValidationError("compatibility: empty base query set");
  Index rows = 0;
  for (const auto& q : base) {
    if (q.n() == 0) throw ValidationError("compatibility: empty base query set");
    if (q.d_prime() != base[0].d_prime())
      throw ShapeError("compatibility: base query sets disagree on d'");
    rows += q.n();
  }
  Matrix stacked(rows, base[0].d_prime());
  Index off = 0;
  for (const auto& q : base) {
    stacked.middleRows(off, q.n()) = q.queries;
    for (int i = 0; i < q.n(); ++i) {
      owner.push_back(q.class_id);
      row_in_class.push_back(i);
    }
    off += q.n();
  }
  return stacked;
}

}  // namespace

CompatibilityReport compatibility(std::span<const FeatureQuerySet> base_queries,
                                  const FeatureMap& novel_support, const ProjectionParams& params,
                                  int k) {
  CompatibilityReport r;
  const Matrix q = stack_queries(base_queries, r.source_class_of_query, r.source_row_in_class);
  require_shape(novel_support.channels() == params.support_projection.rows(), "compatibility",
                novel_support.values(), "novel support", params.support_projection, "W");
  require_shape(q.cols() == params.support_projection.cols(), "compatibility", q, "base queries",
                params.support_projection, "W");
  if (k < 1 || k > novel_support.cells())
    throw ValidationError("compatibility: k=" + std::to_string(k) + " outside [1, hw=" +
                          std::to_string(novel_support.cells()) + "]");
  r.k = k;
  r.scores = q * (novel_support.values() * params.support_projection).transpose();
  r.topk_values.resize(r.scores.rows(), k);
  r.per_query_weight.resize(static_cast<std::size_t>(r.scores.rows()));
  std::vector<double> row(static_cast<std::size_t>(r.scores.cols()));
  std::vector<double> kept;
  for (Index i = 0; i < r.scores.rows(); ++i) {
    for (Index j = 0; j < r.scores.cols(); ++j) row[static_cast<std::size_t>(j)] = r.scores(i, j);
    r.per_query_weight[static_cast<std::size_t>(i)] = topk_sum(row, k, &kept);
    for (int j = 0; j < k; ++j) r.topk_values(i, j) = kept[static_cast<std::size_t>(j)];
  }
  return r;
}

CompatibilityReport compatibility(std::span<const FeatureQuerySet> base_queries,
                                  std::span<const FeatureMap> novel_shots,
                                  const ProjectionParams& params, int k) {
  if (novel_shots.empty()) throw ValidationError("compatibility: no novel support shots");
  CompatibilityReport total = compatibility(base_queries, novel_shots[0], params, k);
  for (std::size_t s = 1; s < novel_shots.size(); ++s) {
    const auto shot = compatibility(base_queries, novel_shots[s], params, k);
    for (std::size_t i = 0; i < total.per_query_weight.size(); ++i)
      total.per_query_weight[i] += shot.per_query_weight[i];
  }
  return total;
}

std::vector<int> select_rows(const CompatibilityReport& report, int n) {
  const auto& w = report.per_query_weight;
  if (n < 0 || static_cast<std::size_t>(n) > w.size())
    throw ValidationError("select_and_duplicate: n=" + std::to_string(n) + " exceeds " +
                          std::to_string(w.size()) + " base queries");
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&w](int a, int b) {
    return w[static_cast<std::size_t>(a)] > w[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

FeatureQuerySet select_and_duplicate(const CompatibilityReport& report,
                                     std::span<const FeatureQuerySet> base_queries, int n,
                                     ClassId novel_class) {
  std::vector<ClassId> owner;
  std::vector<int> row_in_class;
  const Matrix stacked = stack_queries(base_queries, owner, row_in_class);
  if (static_cast<std::size_t>(stacked.rows()) != report.per_query_weight.size())
    throw ShapeError("select_and_duplicate: report does not match the base query stack");
  FeatureQuerySet out;
  out.class_id = novel_class;
  out.queries.resize(n, stacked.cols());
  const auto rows = select_rows(report, n);
  for (int i = 0; i < n; ++i) out.queries.row(i) = stacked.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

Matrix shot_weights(const FeatureQuerySet& own_queries, std::span<const FeatureMap> shots,
                    const ProjectionParams& params, int k) {
  Matrix w(own_queries.n(), static_cast<Index>(shots.size()));
  const FeatureQuerySet* one = &own_queries;
  for (std::size_t s = 0; s < shots.size(); ++s) {
    const auto r = compatibility(std::span<const FeatureQuerySet>(one, 1), shots[s], params, k);
    for (int i = 0; i < own_queries.n(); ++i)
      w(i, static_cast<Index>(s)) = r.per_query_weight[static_cast<std::size_t>(i)];
  }
  return w;
}

Matrix normalized_shot_weights(const Matrix& weight_per_shot, ShotWeighting mode) {
  if (weight_per_shot.cols() == 0) throw ValidationError("integrate_shots: K = 0");
  if (!weight_per_shot.allFinite()) throw ValidationError("integrate_shots: non-finite weights");
  Matrix logits = weight_per_shot;
  if (mode == ShotWeighting::kPerShotScalar) {
    const RowVector mean = weight_per_shot.colwise().mean();
    logits = mean.replicate(weight_per_shot.rows(), 1);
  }
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

PrototypeSet integrate_shots(std::span<const PrototypeSet> prototype_per_shot,
                             const Matrix& weight_per_shot, ShotWeighting mode) {
  if (prototype_per_shot.empty()) throw ValidationError("integrate_shots: K = 0");
  const auto& first = prototype_per_shot[0];
  for (const auto& p : prototype_per_shot) {
    if (p.class_id != first.class_id) throw ValidationError("integrate_shots: mixed classes");
    require_shape(p.prototypes.rows() == first.prototypes.rows() &&
                      p.prototypes.cols() == first.prototypes.cols(),
                  "integrate_shots", first.prototypes, "shot 0", p.prototypes, "shot");
  }
  require_shape(weight_per_shot.rows() == first.prototypes.rows() &&
                    weight_per_shot.cols() == static_cast<Index>(prototype_per_shot.size()),
                "integrate_shots", weight_per_shot, "weights", first.prototypes, "prototypes");
  const Matrix w = normalized_shot_weights(weight_per_shot, mode);
  PrototypeSet out{first.class_id, Matrix::Zero(first.prototypes.rows(), first.prototypes.cols())};
  for (std::size_t s = 0; s < prototype_per_shot.size(); ++s) {
    const Index col = static_cast<Index>(s);
    for (Index i = 0; i < out.prototypes.rows(); ++i)
      out.prototypes.row(i) += w(i, col) * prototype_per_shot[s].prototypes.row(i);
  }
  return out;
}

}  // namespace fpd::transfer
