#include <benchmark/benchmark.h>

#include <random>

#include "aifind/harness.hpp"

using namespace aifind;

namespace {

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> level(0, 100), bit(0, 1);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = level(rng);
    y[i] = i < 2 ? static_cast<int>(i) : bit(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(s, y));
}
BENCHMARK(BM_Auc)->Arg(200)->Arg(10000);

void BM_Harmonize(benchmark::State& state) {
  HeadArchives base;
  for (std::uint32_t t = 0; t < 4; ++t) harmonize(Heads::init(32, t), base, t, {});
  const Heads heads = Heads::init(32, 99);
  for (auto _ : state) {
    HeadArchives a = base;
    benchmark::DoNotOptimize(harmonize(heads, a, 5, {}));
  }
}
BENCHMARK(BM_Harmonize);

void BM_GenerateSample(benchmark::State& state) {
  const RegionMaskSet masks = synthetic_masks(64);
  const auto recipe = default_recipe(0);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(apply_recipe(synth_real_face(64, seed), masks, recipe, ++seed));
}
BENCHMARK(BM_GenerateSample);

}  // namespace
