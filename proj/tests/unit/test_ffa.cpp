#include "fpd/error.hpp"
#include "fpd/ffa.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace fpd;
using testutil::random_matrix;
using testutil::rel_error;

namespace {

ProjectionParams random_params(int d, int dp, int classes, int n_bg, Rng& rng, double alpha) {
  ProjectionParams p = ProjectionParams::initialize(d, dp, classes, n_bg, rng.next());
  p.class_embeddings = random_matrix(classes, d, rng, 0.5);
  p.alpha = alpha;
  return p;
}

}  // namespace

TEST_CASE("single support cell distills to the cell plus its class embedding") {
  Rng rng(1);
  ProjectionParams p = random_params(4, 4, 3, 2, rng, 0.0);
  const FeatureMap support(1, 1, random_matrix(1, 4, rng));
  const FeatureQuerySet q{2, random_matrix(1, 4, rng)};
  const PrototypeSet out = ffa::distill_prototypes(support, q, p);
  const Matrix expected = support.values() + p.class_embeddings.row(2);
  CHECK(out.prototypes == expected);
  CHECK(out.class_id == 2);
}

TEST_CASE("distillation matches the naive attention oracle") {
  Rng rng(2);
  ProjectionParams p = random_params(4, 4, 2, 2, rng, 0.0);
  const FeatureMap support(2, 3, random_matrix(6, 4, rng));
  const FeatureQuerySet q{1, random_matrix(2, 4, rng)};
  const Matrix got = ffa::distill_prototypes(support, q, p).prototypes;
  const Matrix keys = support.values() * p.support_projection;
  oracle::Mat want = oracle::naive_attention(q.queries, keys, support.values(), 0.5, oracle::Axis::kOverColumns);
  for (Index i = 0; i < want.rows(); ++i) want.row(i) += p.class_embeddings.row(1);
  CHECK(testutil::max_abs(got, want) < 1e-6);
}

TEST_CASE("distillation affinity rows are distributions over support positions") {
  Rng rng(3);
  ProjectionParams p = random_params(5, 3, 2, 1, rng, 0.0);
  const FeatureMap support(3, 3, random_matrix(9, 5, rng));
  const FeatureQuerySet q{0, random_matrix(4, 3, rng)};
  const auto a = ffa::distillation_affinity(support, q, p);
  CHECK(a.normalized_axis == ffa::NormalizedAxis::kColumns);
  CHECK(a.values.rows() == 4);
  CHECK(a.values.cols() == 9);
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(a.values.row(i).sum() - 1.0) < 1e-6);
  CHECK(a.values.minCoeff() > 0.0);
  CHECK(a.values.maxCoeff() < 1.0);
}

TEST_CASE("perturbing one support cell moves every prototype row") {
  Rng rng(4);
  ProjectionParams p = random_params(4, 4, 1, 1, rng, 0.0);
  Matrix cells = random_matrix(6, 4, rng);
  const FeatureQuerySet q{0, random_matrix(3, 4, rng)};
  const Matrix before = ffa::distill_prototypes(FeatureMap(2, 3, cells), q, p).prototypes;
  cells(4, 2) += 0.5;
  const Matrix after = ffa::distill_prototypes(FeatureMap(2, 3, cells), q, p).prototypes;
  for (Index i = 0; i < 3; ++i) CHECK((after.row(i) - before.row(i)).norm() > 0.0);
}

TEST_CASE("bank is classes in given order then background") {
  Rng rng(5);
  ProjectionParams p = random_params(4, 4, 3, 5, rng, 0.0);
  const PrototypeSet a{0, random_matrix(5, 4, rng)}, b{2, random_matrix(5, 4, rng)};
  const PrototypeSet sets[] = {a, b};
  const PrototypeBank bank = ffa::build_prototype_bank(sets, p);
  REQUIRE(bank.size() == 15);
  CHECK(bank.rows.topRows(5) == a.prototypes);
  CHECK(bank.rows.middleRows(5, 5) == b.prototypes);
  CHECK(bank.rows.bottomRows(5) == p.background_queries);
  std::vector<ClassId> want(15, kBackground);
  std::fill(want.begin(), want.begin() + 5, 0);
  std::fill(want.begin() + 5, want.begin() + 10, 2);
  CHECK(bank.row_labels == want);

  ProjectionParams small = random_params(4, 4, 1, 1, rng, 0.0);
  const PrototypeSet one{0, random_matrix(1, 4, rng)};
  CHECK(ffa::build_prototype_bank(std::span<const PrototypeSet>(&one, 1), small).size() == 2);
}

TEST_CASE("bank construction rejects duplicates and empty input") {
  Rng rng(6);
  ProjectionParams p = random_params(4, 4, 3, 2, rng, 0.0);
  const PrototypeSet a{1, random_matrix(2, 4, rng)};
  const PrototypeSet dup[] = {a, a};
  CHECK_THROWS_AS(ffa::build_prototype_bank(dup, p), ValidationError);
  CHECK_THROWS_AS(ffa::build_prototype_bank(std::span<const PrototypeSet>(), p), ValidationError);
}

TEST_CASE("roster order changes only the arrangement of bank rows") {
  Rng rng(7);
  ProjectionParams p = random_params(4, 4, 2, 2, rng, 1.0);
  const PrototypeSet a{0, random_matrix(3, 4, rng)}, b{1, random_matrix(3, 4, rng)};
  const PrototypeSet ab[] = {a, b}, ba[] = {b, a};
  const auto x = ffa::build_prototype_bank(ab, p), y = ffa::build_prototype_bank(ba, p);
  std::vector<std::pair<ClassId, std::vector<double>>> rx, ry;
  for (Index i = 0; i < x.size(); ++i) {
    rx.push_back({x.row_labels[i], std::vector<double>(x.rows.row(i).data(), x.rows.row(i).data() + 4)});
    ry.push_back({y.row_labels[i], std::vector<double>(y.rows.row(i).data(), y.rows.row(i).data() + 4)});
  }
  std::sort(rx.begin(), rx.end());
  std::sort(ry.begin(), ry.end());
  CHECK(rx == ry);
  // and the assigned map is the same up to summation order
  const FeatureMap q(3, 4, random_matrix(12, 4, rng));
  CHECK(testutil::max_abs(ffa::assign_prototypes(q, x, p).values(), ffa::assign_prototypes(q, y, p).values()) < 1e-12);
}

TEST_CASE("alpha zero leaves the query map bit-identical") {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    ProjectionParams p = random_params(6, 5, 2, 3, rng, 0.0);
    PrototypeBank bank{random_matrix(9, 6, rng, 10.0), std::vector<ClassId>(9, 0)};
    const FeatureMap q(4, 5, random_matrix(20, 6, rng));
    CHECK(ffa::assign_prototypes(q, bank, p).values() == q.values());
  }
}

TEST_CASE("assignment matches the naive attention oracle") {
  Rng rng(9);
  ProjectionParams p = random_params(4, 4, 2, 2, rng, 1.0);
  PrototypeBank bank{random_matrix(6, 4, rng), std::vector<ClassId>(6, 0)};
  const FeatureMap q(3, 4, random_matrix(12, 4, rng));
  const Matrix got = ffa::assign_prototypes(q, bank, p).values();
  const Matrix qk = q.values() * p.shared_projection, bk = bank.rows * p.shared_projection;
  const oracle::Mat want = q.values() + oracle::naive_attention(qk, bk, bank.rows, 0.5, oracle::Axis::kOverColumns);
  CHECK(testutil::max_abs(got, want) < 1e-6);
  const auto a = ffa::assignment_affinity(q, bank, p);
  for (Index i = 0; i < a.values.rows(); ++i) CHECK(std::abs(a.values.row(i).sum() - 1.0) < 1e-6);
}

TEST_CASE("assignment rejects an empty bank and mismatched widths") {
  Rng rng(10);
  ProjectionParams p = random_params(4, 4, 2, 2, rng, 1.0);
  const FeatureMap q(2, 2, random_matrix(4, 4, rng));
  CHECK_THROWS_AS(ffa::assign_prototypes(q, PrototypeBank{Matrix(0, 4), {}}, p), ValidationError);
  CHECK_THROWS_AS(ffa::assign_prototypes(q, PrototypeBank{random_matrix(3, 5, rng), {0, 0, 0}}, p), ShapeError);
}

TEST_CASE("bank permutation leaves assignment unchanged") {
  Rng rng(11);
  ProjectionParams p = random_params(4, 3, 2, 2, rng, 0.7);
  PrototypeBank bank{random_matrix(5, 4, rng), {0, 0, 1, 1, kBackground}};
  const FeatureMap q(2, 3, random_matrix(6, 4, rng));
  const std::vector<Index> perm{3, 0, 4, 2, 1};
  PrototypeBank shuffled{Matrix(5, 4), std::vector<ClassId>(5)};
  for (Index i = 0; i < 5; ++i) {
    shuffled.rows.row(i) = bank.rows.row(perm[static_cast<std::size_t>(i)]);
    shuffled.row_labels[static_cast<std::size_t>(i)] = bank.row_labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(testutil::max_abs(ffa::assign_prototypes(q, bank, p).values(), ffa::assign_prototypes(q, shuffled, p).values()) < 1e-12);
}

TEST_CASE("dense matching onto a single support cell adds that cell") {
  Rng rng(12);
  ProjectionParams p = random_params(4, 4, 2, 1, rng, 1.0);
  const FeatureMap q(3, 3, random_matrix(9, 4, rng));
  const std::pair<ClassId, FeatureMap> supports[] = {{0, FeatureMap(1, 1, random_matrix(1, 4, rng))}};
  const Matrix out = ffa::dense_match_baseline(q, supports, p).values();
  const Matrix want = q.values().rowwise() + supports[0].second.values().row(0);
  CHECK(testutil::max_abs(out, want) < 1e-12);
}

TEST_CASE("non-finite inputs are validation errors") {
  Rng rng(13);
  ProjectionParams p = random_params(4, 4, 2, 1, rng, 1.0);
  FeatureQuerySet q{0, random_matrix(2, 4, rng)};
  q.queries(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ffa::distill_prototypes(FeatureMap(2, 2, random_matrix(4, 4, rng)), q, p), ValidationError);
  ProjectionParams bad = p;
  bad.alpha = std::numeric_limits<double>::quiet_NaN();
  PrototypeBank bank{random_matrix(3, 4, rng), {0, 0, kBackground}};
  CHECK_THROWS_AS(ffa::assign_prototypes(FeatureMap(2, 2, random_matrix(4, 4, rng)), bank, bad), ValidationError);
}

TEST_CASE("distillation shape mismatch names both operands") {
  Rng rng(14);
  ProjectionParams p = random_params(4, 3, 2, 1, rng, 0.0);
  const FeatureQuerySet q{0, random_matrix(2, 5, rng)};
  try {
    ffa::distill_prototypes(FeatureMap(2, 2, random_matrix(4, 4, rng)), q, p);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("feature queries") != std::string::npos);
    CHECK(msg.find("W") != std::string::npos);
  }
}

TEST_CASE("FFA gradients match finite differences for every parameter") {
  Rng rng(15);
  const int d = 4, dp = 3, n = 2, n_bg = 2;
  const Matrix support = random_matrix(5, d, rng), query = random_matrix(6, d, rng);
  const Matrix q0 = random_matrix(n, dp, rng), w0 = random_matrix(d, dp, rng, 0.5),
               wp0 = random_matrix(d, dp, rng, 0.5), e0 = random_matrix(1, d, rng, 0.3),
               bg0 = random_matrix(n_bg, d, rng), a0 = Matrix::Constant(1, 1, 0.6);
  const Matrix mix = random_matrix(6, d, rng);
  auto loss = [&](const std::vector<ag::Var>& v) {
    auto dist = ffa::distill(ag::Var(support), v[0], v[1], v[3]);
    const ag::Var rows[] = {dist.prototypes, v[4]};
    auto out = ffa::assign(ag::Var(query), ag::concat_rows(rows), v[2], v[5]);
    return ag::sum(ag::hadamard(out.output, ag::Var(mix)));
  };
  const std::vector<Matrix> init{q0, w0, wp0, e0, bg0, a0};
  std::vector<ag::Var> leaves;
  for (const auto& m : init) leaves.emplace_back(m, true);
  loss(leaves).backward();
  const char* names[] = {"q", "W", "W'", "E_cls", "background", "alpha"};
  for (std::size_t i = 0; i < init.size(); ++i) {
    auto f = [&](const oracle::Mat& x) {
      std::vector<ag::Var> probe;
      for (std::size_t j = 0; j < init.size(); ++j) probe.emplace_back(j == i ? Matrix(x) : init[j]);
      return loss(probe).item();
    };
    const double err = rel_error(leaves[i].grad(), oracle::finite_diff_grad(f, init[i], 1e-5));
    INFO(names[i]);
    CHECK(err < 1e-4);
    CHECK(leaves[i].grad().norm() > 0.0);
  }
}
