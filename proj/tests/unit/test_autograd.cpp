#include "fpd/autograd.hpp"
#include "fpd/error.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <functional>
#include <vector>

using namespace fpd;
using testutil::random_matrix;
using testutil::rel_error;

namespace {

using Builder = std::function<ag::Var(const std::vector<ag::Var>&)>;

/// Compares the analytic gradient of every input against central differences.
double worst_grad_error(const Builder& f, const std::vector<Matrix>& inputs) {
  std::vector<ag::Var> leaves;
  for (const auto& m : inputs) leaves.emplace_back(m, true);
  f(leaves).backward();
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto scalar = [&](const oracle::Mat& x) {
      ag::NoGradGuard guard;
      std::vector<ag::Var> probe;
      for (std::size_t j = 0; j < inputs.size(); ++j) probe.emplace_back(j == i ? Matrix(x) : inputs[j]);
      return f(probe).item();
    };
    const Matrix numeric = oracle::finite_diff_grad(scalar, inputs[i], 1e-6);
    worst = std::max(worst, rel_error(leaves[i].grad(), numeric));
  }
  return worst;
}

/// A fixed random projection turns a matrix output into a scalar with non-trivial upstream grads.
ag::Var probe_sum(const ag::Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::hadamard(y, ag::Var(random_matrix(y.rows(), y.cols(), rng))));
}

}  // namespace

TEST_CASE("elementwise and linear ops pass gradient checks") {
  Rng rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(3, 4, rng);
  const Matrix row = random_matrix(1, 4, rng), s = random_matrix(1, 1, rng);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::matmul(v[0], v[1]), 1); }, {a, b}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::matmul_nt(v[0], v[1]), 2); }, {a, c}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::hadamard(v[0], v[1]), 3); }, {a, c}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::sub(v[0], v[1]), 4); }, {a, c}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::add_row(v[0], v[1]), 5); }, {a, row}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::scale_by(v[0], v[1]), 6); }, {a, s}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::softmax_rows(v[0]), 7); }, {a}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::group_mean_rows(v[0], 2), 8); },
                         {random_matrix(4, 3, rng)}) < 1e-6);
}

TEST_CASE("reshaping ops pass gradient checks") {
  Rng rng(2);
  const Matrix a = random_matrix(4, 3, rng), b = random_matrix(4, 2, rng);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::reshape(v[0], 2, 6), 1); }, {a}) < 1e-6);
  CHECK(worst_grad_error(
            [](auto& v) {
              const ag::Var parts[] = {v[0], v[1]};
              return probe_sum(ag::concat_cols(parts), 2);
            },
            {a, b}) < 1e-6);
  CHECK(worst_grad_error(
            [](auto& v) {
              const ag::Var parts[] = {v[0], v[0]};
              return probe_sum(ag::concat_rows(parts), 3);
            },
            {a}) < 1e-6);
  CHECK(worst_grad_error(
            [](auto& v) {
              const Index rows[] = {3, 0, 3};
              return probe_sum(ag::gather_rows(v[0], rows), 4);
            },
            {a}) < 1e-6);
  CHECK(worst_grad_error(
            [](auto& v) {
              const Index cols[] = {2, 2, 1};
              return probe_sum(ag::gather_cols(v[0], cols), 5);
            },
            {a}) < 1e-6);
  CHECK(worst_grad_error([](auto& v) { return probe_sum(ag::slice_rows(v[0], 1, 2), 6); }, {a}) < 1e-6);
}

TEST_CASE("conv2d matches a direct convolution and passes gradient checks") {
  Rng rng(3);
  const int h = 5, w = 4, cin = 2, cout = 3;
  const Matrix x = random_matrix(2 * h * w, cin, rng);
  const Matrix k = random_matrix(9 * cin, cout, rng);
  const Matrix bias = random_matrix(1, cout, rng);
  const ag::Var y = ag::conv2d(ag::Var(x), {2, h, w}, ag::Var(k), ag::Var(bias), 3, 2, 1);
  const int oh = ag::conv_out_size(h, 3, 2, 1), ow = ag::conv_out_size(w, 3, 2, 1);
  REQUIRE(oh == 3);
  REQUIRE(ow == 2);
  REQUIRE(y.rows() == 2 * oh * ow);
  for (int bi = 0; bi < 2; ++bi)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int co = 0; co < cout; ++co) {
          double acc = bias(0, co);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (int ci = 0; ci < cin; ++ci)
                acc += x(bi * h * w + iy * w + ix, ci) * k((ky * 3 + kx) * cin + ci, co);
            }
          CHECK(y.value()(bi * oh * ow + oy * ow + ox, co) == doctest::Approx(acc).epsilon(1e-12));
        }
  CHECK(worst_grad_error(
            [&](auto& v) { return probe_sum(ag::conv2d(v[0], {2, h, w}, v[1], v[2], 3, 2, 1), 9); },
            {x, k, bias}) < 1e-6);
}

TEST_CASE("roi align passes gradient checks and averages constant maps exactly") {
  Rng rng(4);
  const Matrix x = random_matrix(6 * 6, 2, rng);
  const Box boxes[] = {{2.0, 3.0, 17.0, 20.0}, {0.0, 0.0, 23.5, 23.5}};
  CHECK(worst_grad_error([&](auto& v) { return probe_sum(ag::roi_align(v[0], 6, 6, boxes, 0.25, 3, 2), 3); },
                         {x}) < 1e-6);
  const Matrix flat = Matrix::Constant(36, 2, 1.5);
  const Matrix out = ag::roi_align(ag::Var(flat), 6, 6, boxes, 0.25, 3, 2).value();
  CHECK((out.array() - 1.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("losses pass gradient checks") {
  Rng rng(5);
  const Matrix logits = random_matrix(4, 3, rng);
  const int labels[] = {0, 2, 1, 2};
  CHECK(worst_grad_error([&](auto& v) { return ag::cross_entropy(v[0], labels); }, {logits}) < 1e-6);
  Matrix t(4, 3);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(i % 2);
  CHECK(worst_grad_error([&](auto& v) { return ag::sigmoid_bce(v[0], t); }, {logits}) < 1e-6);
  const Matrix target = random_matrix(4, 3, rng);
  CHECK(worst_grad_error([&](auto& v) { return ag::smooth_l1(v[0], target, 0.5, 3.0); }, {logits}) < 1e-6);
}

TEST_CASE("cross entropy of saturated correct logits is near zero") {
  Matrix logits = Matrix::Constant(3, 4, -20.0);
  const int labels[] = {1, 3, 0};
  for (int i = 0; i < 3; ++i) logits(i, labels[i]) = 20.0;
  CHECK(ag::cross_entropy(ag::Var(logits), labels).item() < 1e-3);
}

TEST_CASE("no-grad guard records nothing") {
  ag::Var a(Matrix::Ones(2, 2), true);
  {
    ag::NoGradGuard guard;
    const ag::Var y = ag::matmul(a, a);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->inputs.empty());
  }
  CHECK(ag::matmul(a, a).requires_grad());
}

TEST_CASE("shape mismatches raise shape errors") {
  CHECK_THROWS_AS(ag::matmul(ag::Var(Matrix::Zero(2, 3)), ag::Var(Matrix::Zero(2, 3))), ShapeError);
  CHECK_THROWS_AS(ag::reshape(ag::Var(Matrix::Zero(2, 3)), 4, 2), ShapeError);
}

TEST_CASE("gradients accumulate across uses of one leaf") {
  ag::Var a(Matrix::Constant(1, 1, 3.0), true);
  ag::sum(ag::add(ag::hadamard(a, a), a)).backward();
  CHECK(a.grad()(0, 0) == doctest::Approx(7.0));
}
