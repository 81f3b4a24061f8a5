#include <benchmark/benchmark.h>

#include <random>

#include "aifind/harness.hpp"

using namespace aifind;

namespace {

Image face(int side) { return synth_real_face(side, 7); }

void BM_IndicatorMatrix(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Image img = face(side);
  const RegionMaskSet masks = synthetic_masks(side);
  for (auto _ : state) benchmark::DoNotOptimize(compute_indicator_matrix(img, masks));
}
BENCHMARK(BM_IndicatorMatrix)->Arg(64)->Arg(128);

void BM_Texture(benchmark::State& state) {
  const Image img = face(64);
  const Mask all(64, 64, true);
  for (auto _ : state) benchmark::DoNotOptimize(texture_indicator(img, all));
}
BENCHMARK(BM_Texture);

void BM_Structure(benchmark::State& state) {
  const Image img = face(64);
  const RegionMaskSet masks = synthetic_masks(64);
  for (auto _ : state) benchmark::DoNotOptimize(structural_indicator(img, masks.region(Region::nose), masks.skin()));
}
BENCHMARK(BM_Structure);

}  // namespace
