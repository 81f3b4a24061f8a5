#include <benchmark/benchmark.h>

#include "aifind/harness.hpp"

using namespace aifind;

namespace {

EncoderConfig desk() {
  EncoderConfig c;
  c.image_side = 64;
  c.patch_size = 8;
  c.d_model = 32;
  c.layers = 4;
  c.heads = 4;
  c.apa_layers = 2;
  return c;
}

Mat anchors(int n, int d) {
  Mat a = Mat::Random(n, d);
  for (int r = 0; r < n; ++r) a.row(r).normalize();
  return a;
}

void BM_Forward(benchmark::State& state) {
  const EncoderState enc = EncoderState::init(desk(), 1);
  const Image img = synth_real_face(64, 3);
  const Mat a = state.range(0) ? anchors(3, 32) : Mat();
  for (auto _ : state) benchmark::DoNotOptimize(forward(img, a, enc).feature);
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

void BM_ForwardBackward(benchmark::State& state) {
  const EncoderState enc = EncoderState::init(desk(), 1);
  const Image img = synth_real_face(64, 3);
  const Mat a = anchors(3, 32);
  EncoderState grads = EncoderState::zeros_like(enc);
  const RowVec up = RowVec::Ones(32);
  for (auto _ : state) {
    auto fwd = forward(img, a, enc);
    backward_into(fwd.trace, enc, up, grads);
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_TrainingStep(benchmark::State& state) {
  const EncoderState enc = EncoderState::init(desk(), 1);
  const Heads heads = Heads::init(32, 2);
  const Image img = synth_real_face(64, 3);
  const Mat a = anchors(3, 32);
  const RowVec teacher = forward(img, a, enc).feature;
  EncoderState eg = EncoderState::zeros_like(enc);
  Heads hg = Heads::zeros_like(heads);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        sample_objective(enc, heads, img, a, Label::fake, {1, 0, 0, 0, 0}, &teacher, 0.1, 0.1, &eg, &hg).total);
}
BENCHMARK(BM_TrainingStep);

}  // namespace
