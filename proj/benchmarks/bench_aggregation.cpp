#include "fpd/autograd.hpp"
#include "fpd/detector.hpp"
#include "fpd/ffa.hpp"

#include <benchmark/benchmark.h>

using namespace fpd;

namespace {

Matrix gaussian(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// query map 16x16, c classes with 8x8 supports, d = 32, n = 5
struct Setup {
  ProjectionParams params;
  FeatureMap query;
  PrototypeBank bank;
  std::vector<std::pair<ClassId, FeatureMap>> supports;

  explicit Setup(int classes) {
    Rng rng(1);
    params = ProjectionParams::initialize(32, 32, classes, 5, 7);
    params.alpha = 0.5;
    query = FeatureMap(16, 16, gaussian(256, 32, rng));
    std::vector<PrototypeSet> sets;
    for (int c = 0; c < classes; ++c) {
      FeatureMap s(8, 8, gaussian(64, 32, rng));
      sets.push_back(ffa::distill_prototypes(s, FeatureQuerySet{c, gaussian(5, 32, rng)}, params));
      supports.emplace_back(c, std::move(s));
    }
    bank = ffa::build_prototype_bank(sets, params);
  }
};

void BM_FfaAssign(benchmark::State& state) {
  const Setup s(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ffa::assign_prototypes(s.query, s.bank, s.params));
}
BENCHMARK(BM_FfaAssign)->Arg(3)->Arg(9);

void BM_DenseMatch(benchmark::State& state) {
  const Setup s(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ffa::dense_match_baseline(s.query, s.supports, s.params));
}
BENCHMARK(BM_DenseMatch)->Arg(3)->Arg(9);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  const ag::Var x(gaussian(64 * 64, 3, rng));
  const ag::Var w(gaussian(27, 16, rng));
  const ag::Var b(Matrix::Zero(1, 16));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, {1, 64, 64}, w, b, 3, 2, 1).value());
}
BENCHMARK(BM_Conv2d);

void BM_DetectorInference(benchmark::State& state) {
  DetectorConfig config;
  config.variant = Variant::parse(state.range(0) == 0 ? "baseline" : state.range(0) == 1 ? "full" : "dense-match");
  Detector det(config);
  det.params().get("ffa.alpha").mutable_value()(0, 0) = 0.5;
  Rng rng(3);
  std::map<ClassId, std::vector<FeatureMap>> crops;
  for (ClassId c = 0; c < 9; ++c) crops[c].push_back(FeatureMap(32, 32, Matrix(gaussian(1024, 3, rng).cwiseAbs())));
  const SupportEncoding enc = det.encode_supports(crops);
  const FeatureMap image(64, 64, Matrix(gaussian(4096, 3, rng).cwiseAbs()));
  for (auto _ : state) benchmark::DoNotOptimize(det.detect(image, enc));
  state.SetLabel(config.variant.name());
}
BENCHMARK(BM_DetectorInference)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
