#include <memory>

#include <benchmark/benchmark.h>

#include "uq/estimator.hpp"
#include "uq/two_stage.hpp"
#include "uq/vq.hpp"

using namespace uq;

namespace {

FamilyPtr shifted_uniforms() {
  return std::make_shared<const SourceFamily>(
      MixtureFamily({Density::uniform(0, 1), Density::uniform(0.5, 1.5)}, {0, 1.5}));
}

void BM_NnEncode(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto count = static_cast<std::size_t>(state.range(1));
  const auto cb = random_codebook(n, count, {0, 1.5}, 1);
  const auto xs = sample(SourceModel(shifted_uniforms(), {0.7, 0.3}), 2, n * 256);
  const DistortionSpec spec(2, 1.5);
  std::size_t b = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn_encode(cb, std::span(xs).subspan((b++ % 256) * n, n), spec));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_NnEncode)->Args({1, 4})->Args({1, 256})->Args({2, 16})->Args({4, 256})->Args({8, 256});

FamilyPtr three_components() {
  return std::make_shared<const SourceFamily>(MixtureFamily(
      {Density::truncated_gaussian(0.5, 0.2, 0, 1.5), Density::triangular(0.2, 0.9, 1.5), Density::uniform(0, 1.5)},
      {0, 1.5}));
}

void BM_MinDistanceEstimate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto fam = state.range(1) == 2 ? shifted_uniforms() : three_components();
  auto quad = std::make_shared<const QuadratureGrid>(fam->support());
  MinDistanceEstimator est(fam, make_candidate_grid(*fam, n), quad);
  const auto xs = sample(SourceModel(fam, fam->centroid()), 3, n);
  for (auto _ : state) benchmark::DoNotOptimize(est.estimate(xs).index);
  state.counters["candidates"] = static_cast<double>(est.grid().points.size());
  state.counters["sets"] = static_cast<double>(est.distinct_sets());
}
BENCHMARK(BM_MinDistanceEstimate)
    ->ArgsProduct({{64, 256, 1024, 4096}, {2, 3}})
    ->Unit(benchmark::kMicrosecond);

void BM_LloydSamples(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const SourceModel m(shifted_uniforms(), {0.7, 0.3});
  const DistortionSpec spec(2, 1.5);
  for (auto _ : state) benchmark::DoNotOptimize(lloyd_design(m, n, 2.0, spec, 4).codewords.data());
}
BENCHMARK(BM_LloydSamples)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_LloydDensity(benchmark::State& state) {
  const SourceModel m(shifted_uniforms(), {0.7, 0.3});
  const QuadratureGrid quad({0, 1.5});
  const auto density = tabulate(m, quad);
  const DistortionSpec spec(2, 1.5);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        lloyd_design_density(density, quad, static_cast<unsigned>(state.range(0)), spec).codewords.data());
}
BENCHMARK(BM_LloydDensity)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
