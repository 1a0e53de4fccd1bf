#include "fpd/error.hpp"
#include "fpd/query_transfer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace fpd;
using testutil::random_matrix;

namespace {

std::vector<FeatureQuerySet> base_sets(int classes, int n, int dp, Rng& rng) {
  std::vector<FeatureQuerySet> out;
  for (int c = 0; c < classes; ++c) out.push_back({c, random_matrix(n, dp, rng)});
  return out;
}

Matrix stacked(const std::vector<FeatureQuerySet>& sets) {
  Index rows = 0;
  for (const auto& s : sets) rows += s.queries.rows();
  Matrix out(rows, sets.front().queries.cols());
  Index at = 0;
  for (const auto& s : sets) {
    out.middleRows(at, s.queries.rows()) = s.queries;
    at += s.queries.rows();
  }
  return out;
}

}  // namespace

TEST_CASE("top-k sum examples") {
  const double row[] = {3, 1, 2};
  CHECK(transfer::topk_sum(row, 2) == 5.0);
  CHECK(transfer::topk_sum(row, 3) == 6.0);
  CHECK(oracle::brute_topk_weights(oracle::Mat{{3, 1, 2}}, 2)[0] == 5.0);
  CHECK(transfer::default_topk(64) == 16);
  CHECK(transfer::default_topk(3) == 1);
}

TEST_CASE("compatibility matches brute-force sort-and-sum exactly") {
  Rng rng(1);
  const ProjectionParams p = ProjectionParams::initialize(4, 3, 3, 1, 9);
  const auto sets = base_sets(3, 1, 3, rng);
  const FeatureMap x(2, 2, random_matrix(4, 4, rng));
  const auto r = transfer::compatibility(sets, x, p, 2);
  const Matrix scores = stacked(sets) * (x.values() * p.support_projection).transpose();
  CHECK(r.scores == scores);
  CHECK(r.per_query_weight == oracle::brute_topk_weights(scores, 2));
  for (std::size_t i = 0; i < r.per_query_weight.size(); ++i) {
    double s = 0;
    for (Index j = 0; j < r.topk_values.cols(); ++j) s += r.topk_values(static_cast<Index>(i), j);
    CHECK(s == r.per_query_weight[i]);
  }
}

TEST_CASE("k = hw gives full row sums") {
  Rng rng(2);
  const ProjectionParams p = ProjectionParams::initialize(3, 3, 2, 1, 4);
  const auto sets = base_sets(2, 2, 3, rng);
  const FeatureMap x(2, 3, random_matrix(6, 3, rng));
  const auto r = transfer::compatibility(sets, x, p, 6);
  for (Index i = 0; i < r.scores.rows(); ++i)
    CHECK(r.per_query_weight[static_cast<std::size_t>(i)] == doctest::Approx(r.scores.row(i).sum()).epsilon(1e-12));
}

TEST_CASE("zero support map gives zero weights and index-ordered selection") {
  Rng rng(3);
  const ProjectionParams p = ProjectionParams::initialize(3, 3, 2, 1, 4);
  const auto sets = base_sets(2, 3, 3, rng);
  const auto r = transfer::compatibility(sets, FeatureMap::zeros(2, 2, 3), p, 2);
  for (double w : r.per_query_weight) CHECK(w == 0.0);
  CHECK(transfer::select_rows(r, 3) == std::vector<int>{0, 1, 2});
}

TEST_CASE("compatibility rejects bad k and empty base sets") {
  Rng rng(4);
  const ProjectionParams p = ProjectionParams::initialize(3, 3, 2, 1, 4);
  const auto sets = base_sets(2, 1, 3, rng);
  const FeatureMap x(2, 2, random_matrix(4, 3, rng));
  CHECK_THROWS_AS(transfer::compatibility(sets, x, p, 5), ValidationError);
  CHECK_THROWS_AS(transfer::compatibility(sets, x, p, 0), ValidationError);
  CHECK_THROWS_AS(transfer::compatibility(std::span<const FeatureQuerySet>(), x, p, 2), ValidationError);
}

TEST_CASE("selection picks the largest weights with index tie-breaks") {
  transfer::CompatibilityReport r;
  r.per_query_weight = {5, 1, 9};
  CHECK(transfer::select_rows(r, 2) == std::vector<int>{2, 0});
  r.per_query_weight = {2, 7, 7, 1};
  CHECK(transfer::select_rows(r, 2) == std::vector<int>{1, 2});
  CHECK(transfer::select_rows(r, 4) == std::vector<int>{1, 2, 0, 3});
}

TEST_CASE("duplicated rows are independent copies") {
  Rng rng(5);
  const ProjectionParams p = ProjectionParams::initialize(4, 4, 3, 1, 4);
  auto sets = base_sets(3, 2, 4, rng);
  const auto snapshot = sets;
  const FeatureMap x(2, 2, random_matrix(4, 4, rng));
  const auto r = transfer::compatibility(sets, x, p, 2);
  FeatureQuerySet novel = transfer::select_and_duplicate(r, sets, 2, 7);
  CHECK(novel.class_id == 7);
  const auto rows = transfer::select_rows(r, 2);
  const Matrix all = stacked(sets);
  for (int i = 0; i < 2; ++i) CHECK(novel.queries.row(i) == all.row(rows[static_cast<std::size_t>(i)]));
  novel.queries.array() += 1.0;
  for (std::size_t c = 0; c < sets.size(); ++c) CHECK(sets[c].queries == snapshot[c].queries);
}

TEST_CASE("selection is invariant to positive scaling of the support map") {
  Rng rng(6);
  const ProjectionParams p = ProjectionParams::initialize(4, 4, 3, 1, 4);
  const auto sets = base_sets(3, 2, 4, rng);
  const Matrix v = random_matrix(9, 4, rng);
  const auto a = transfer::compatibility(sets, FeatureMap(3, 3, v), p, 3);
  const auto b = transfer::compatibility(sets, FeatureMap(3, 3, 2.0 * v), p, 3);
  for (std::size_t i = 0; i < a.per_query_weight.size(); ++i)
    CHECK(b.per_query_weight[i] == doctest::Approx(2.0 * a.per_query_weight[i]).epsilon(1e-12));
  CHECK(transfer::select_rows(a, 3) == transfer::select_rows(b, 3));
}

TEST_CASE("multi-shot compatibility sums per-shot weights") {
  Rng rng(7);
  const ProjectionParams p = ProjectionParams::initialize(4, 4, 2, 1, 4);
  const auto sets = base_sets(2, 2, 4, rng);
  const std::vector<FeatureMap> shots{FeatureMap(2, 2, random_matrix(4, 4, rng)),
                                      FeatureMap(2, 2, random_matrix(4, 4, rng))};
  const auto both = transfer::compatibility(sets, shots, p, 2);
  const auto a = transfer::compatibility(sets, shots[0], p, 2);
  const auto b = transfer::compatibility(sets, shots[1], p, 2);
  for (std::size_t i = 0; i < both.per_query_weight.size(); ++i)
    CHECK(both.per_query_weight[i] == a.per_query_weight[i] + b.per_query_weight[i]);
}

TEST_CASE("integrating one shot returns it exactly") {
  Rng rng(8);
  const PrototypeSet p{3, random_matrix(5, 4, rng)};
  const auto out = transfer::integrate_shots(std::span<const PrototypeSet>(&p, 1), random_matrix(5, 1, rng));
  CHECK(out.prototypes == p.prototypes);
  CHECK(out.class_id == 3);
}

TEST_CASE("equal weights give the arithmetic mean") {
  Rng rng(9);
  const std::vector<PrototypeSet> shots{{0, random_matrix(2, 3, rng)}, {0, random_matrix(2, 3, rng)},
                                        {0, random_matrix(2, 3, rng)}};
  const Matrix w = Matrix::Constant(2, 3, 0.7);
  const auto out = transfer::integrate_shots(shots, w);
  const Matrix mean = (shots[0].prototypes + shots[1].prototypes + shots[2].prototypes) / 3.0;
  CHECK(testutil::max_abs(out.prototypes, mean) < 1e-12);
}

TEST_CASE("integration matches the explicit softmax oracle and weights sum to one") {
  Rng rng(10);
  std::vector<PrototypeSet> shots;
  std::vector<oracle::Mat> raw;
  for (int s = 0; s < 4; ++s) {
    shots.push_back({1, random_matrix(2, 3, rng)});
    raw.push_back(shots.back().prototypes);
  }
  const Matrix w = random_matrix(2, 4, rng, 3.0);
  CHECK(testutil::max_abs(transfer::integrate_shots(shots, w).prototypes, oracle::explicit_integration(raw, w)) < 1e-7);
  const Matrix norm = transfer::normalized_shot_weights(w);
  for (Index i = 0; i < 2; ++i) CHECK(std::abs(norm.row(i).sum() - 1.0) < 1e-7);
}

TEST_CASE("raising one shot weight raises its normalized weight") {
  Rng rng(11);
  Matrix w = random_matrix(3, 4, rng);
  const Matrix before = transfer::normalized_shot_weights(w);
  w(1, 2) += 0.3;
  const Matrix after = transfer::normalized_shot_weights(w);
  CHECK(after(1, 2) > before(1, 2));
  CHECK(after.row(0) == before.row(0));
}

TEST_CASE("per-shot scalar weighting shares one distribution across queries") {
  Rng rng(12);
  const Matrix w = random_matrix(3, 4, rng);
  const Matrix norm = transfer::normalized_shot_weights(w, transfer::ShotWeighting::kPerShotScalar);
  CHECK(norm.row(0) == norm.row(2));
  CHECK(std::abs(norm.row(0).sum() - 1.0) < 1e-12);
}

TEST_CASE("integration rejects K = 0 and mixed classes") {
  CHECK_THROWS_AS(transfer::integrate_shots(std::span<const PrototypeSet>(), Matrix(2, 0)), ValidationError);
  Rng rng(13);
  const std::vector<PrototypeSet> mixed{{0, random_matrix(2, 3, rng)}, {1, random_matrix(2, 3, rng)}};
  CHECK_THROWS_AS(transfer::integrate_shots(mixed, Matrix::Zero(2, 2)), ValidationError);
}
