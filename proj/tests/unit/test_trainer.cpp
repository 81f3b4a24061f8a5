#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "aifind/trainer.hpp"
#include "support/expect.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace aifind;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.image_side = 8;
  c.patch_size = 4;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.apa_layers = 1;
  return c;
}

Embedding unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Embedding v(d);
  for (auto& x : v) x = g(rng);
  const double n = oracle::norm(v);
  for (auto& x : v) x /= n;
  return v;
}

std::shared_ptr<const AnchorLibrary> make_library(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::array<Anchor, kChannelCount> a;
  for (std::size_t i = 0; i < kChannelCount; ++i) a[i] = {channels()[i], {"r", "f", unit(d, rng), unit(d, rng)}};
  return std::make_shared<const AnchorLibrary>(a);
}

// Fakes carry a bright square in the top-left patch.
std::vector<TrainSample> toy_data(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.5), a(-1, 1);
  std::vector<TrainSample> out;
  for (int i = 0; i < 2 * per_class; ++i) {
    TrainSample s;
    s.id = "s" + std::to_string(i);
    s.label = i % 2 ? Label::fake : Label::real;
    s.image = Image(8, 8, 3);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) s.image.set(x, y, c, u(rng) + (s.label == Label::fake && x < 4 && y < 4 ? 0.4 : 0.0));
    std::array<double, kChannelCount> an{};
    for (auto& v : an) v = a(rng);
    s.indicators.anomaly = an;
    if (s.label == Label::fake) s.y_ind = {1, 0, 0, 0, 0};
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch = 8;
  c.lr = 1e-2;
  c.warmup = 1;
  c.n_anchors = 2;
  c.seed = 5;
  return c;
}

std::uint64_t fingerprint(const Heads& h) {
  std::uint64_t x = 1469598103934665603ull;
  for (const auto& t : h.tensors())
    for (Eigen::Index i = 0; i < t.tensor->size(); ++i) {
      double v = t.tensor->data()[i];
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      x = (x ^ bits) * 1099511628211ull;
    }
  return x;
}

double accuracy(const TaskOutcome& o, const std::vector<TrainSample>& data, const AnchorLibrary& lib, int n,
                bool inject) {
  int ok = 0;
  for (const auto& s : data) {
    const RowVec f0 = forward(s.image, Mat(), o.encoder).feature;
    const auto m = match_label_free(Embedding(f0.data(), f0.data() + f0.size()), lib, static_cast<std::size_t>(n));
    const double p = o.heads.fake_probability(inject ? forward(s.image, anchor_rows(m, 8), o.encoder).feature : f0);
    ok += (p > 0.5) == (s.label == Label::fake);
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("classification loss") {
    RowVec z(2);
    z << 0.0, 0.0;
    CHECK(loss_cls(z, Label::fake) == doctest::Approx(std::numbers::ln2));
    z << 50.0, -50.0;
    CHECK(loss_cls(z, Label::real) <= 1e-40);
    CHECK(loss_cls(z, Label::fake) == doctest::Approx(100.0));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0, 3);
    for (int i = 0; i < 20; ++i) {
      z << g(rng), g(rng);
      for (int y : {0, 1}) CHECK(std::abs(loss_cls(z, static_cast<Label>(y)) - oracle::log_softmax_ce(z(0), z(1), y)) <= 1e-12);
    }
    RowVec d;
    z << 0.3, -0.2;
    loss_cls(z, Label::fake, &d);
    CHECK(d.sum() == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("artifact loss") {
    RowVec z = RowVec::Zero(5);
    CHECK(loss_ind(z, {1, 0, 1, 0, 0}) == doctest::Approx(std::numbers::ln2));
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0, 10);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> zz(5);
      std::vector<int> y(5);
      IndVector yi{};
      for (int k = 0; k < 5; ++k) {
        zz[k] = z(k) = g(rng);
        y[k] = yi[k] = static_cast<std::uint8_t>(rng() % 2);
      }
      CHECK(std::abs(loss_ind(z, yi) - oracle::bce_mean(zz, y)) <= 1e-10);
    }
    z << 800, -800, 0, 0, 0;
    CHECK(std::isfinite(loss_ind(z, {0, 1, 0, 0, 0})));
    CHECK_ERROR_KIND(loss_ind(RowVec::Zero(4), {}), ErrorKind::InvalidInput);
  }

  TEST_CASE("distillation and total") {
    RowVec a(3), b(3);
    a << 1, 2, 3;
    b << 1, 0, 3;
    CHECK(loss_dis(a, a) == 0.0);
    CHECK(loss_dis(a, b) == doctest::Approx(4.0));
    CHECK(loss_total(1.0, 2.0, 3.0, 0.1, 0.3) == doctest::Approx(1.0 + 0.2 + 0.9));
    CHECK(loss_total(1.0, 5.0, 5.0, 0.0, 0.0) == 1.0);
  }

  TEST_CASE("artifact target from matched anchors") {
    std::vector<MatchedAnchor> m = {{{Region::mouth, Dimension::blur}, Label::fake, "", {}, 0},
                                    {{Region::eyes, Dimension::blur}, Label::fake, "", {}, 0},
                                    {{Region::jawline, Dimension::boundary}, Label::fake, "", {}, 0}};
    CHECK(make_ind_target(Label::fake, m) == IndVector{1, 0, 0, 0, 1});
    CHECK(make_ind_target(Label::real, m) == IndVector{});
  }

  TEST_CASE("anchor schedule switches after warm-up") {
    auto lib = make_library(8, 3);
    const auto data = toy_data(1, 4);
    const EncoderState enc = EncoderState::init(tiny_encoder(), 1);
    TrainConfig c = quick_config();
    c.warmup = 2;
    CHECK(select_anchors_for_step(1, data[1], enc, *lib, c).phase == AnchorPhase::fixed);
    const auto at_n = select_anchors_for_step(2, data[1], enc, *lib, c);
    CHECK(at_n.phase == AnchorPhase::fixed);
    const auto expect = match_static(data[1].indicators, *lib, Label::fake, 2);
    CHECK(at_n.anchors[0].channel == expect[0].channel);
    const auto after = select_anchors_for_step(3, data[1], enc, *lib, c);
    CHECK(after.phase == AnchorPhase::dynamic);
    CHECK(after.anchors.size() == 2);
    c.warmup = 0;
    CHECK(select_anchors_for_step(1, data[0], enc, *lib, c).phase == AnchorPhase::dynamic);
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto lib = make_library(8, 3);
    const auto data = toy_data(4, 5);
    const EncoderState enc = EncoderState::init(tiny_encoder(), 1);
    const Heads heads = Heads::init(8, 2);
    TrainConfig c = quick_config();
    c.lr = 0.0;
    const auto out = train_task(data, enc, heads, nullptr, lib, c);
    CHECK(out.encoder.fingerprint() == enc.fingerprint());
    CHECK(fingerprint(out.heads) == fingerprint(heads));
    CHECK(out.log.size() == 3);
  }

  TEST_CASE("training is deterministic") {
    auto lib = make_library(8, 3);
    const auto data = toy_data(4, 6);
    const EncoderState enc = EncoderState::init(tiny_encoder(), 1);
    const Heads heads = Heads::init(8, 2);
    const auto a = train_task(data, enc, heads, nullptr, lib, quick_config());
    const auto b = train_task(data, enc, heads, nullptr, lib, quick_config());
    CHECK(a.encoder.fingerprint() == b.encoder.fingerprint());
    CHECK(fingerprint(a.heads) == fingerprint(b.heads));
    CHECK(a.log.back().loss_total == b.log.back().loss_total);
  }

  TEST_CASE("objective gradients agree with finite differences") {
    std::mt19937_64 rng(7);
    EncoderState enc = EncoderState::init(tiny_encoder(), 3);
    for (auto& L : enc.layers)
      if (L.apa) L.apa->gate.setConstant(0.8);
    Heads heads = Heads::init(8, 4);
    const Image img = oracle::random_rgb(8, 8, rng);
    Mat anchors(2, 8);
    for (int r = 0; r < 2; ++r) {
      const auto e = unit(8, rng);
      for (int c = 0; c < 8; ++c) anchors(r, c) = e[c];
    }
    RowVec teacher = forward(img, anchors, enc).feature;
    teacher.array() += 0.01;
    const IndVector y{1, 0, 1, 0, 0};
    EncoderState eg = EncoderState::zeros_like(enc);
    Heads hg = Heads::zeros_like(heads);
    sample_objective(enc, heads, img, anchors, Label::fake, y, &teacher, 0.1, 1.0, &eg, &hg);
    auto loss = [&] { return sample_objective(enc, heads, img, anchors, Label::fake, y, &teacher, 0.1, 1.0).total; };
    auto params = enc.tensors();
    for (auto& t : heads.tensors()) params.push_back(t);
    auto grads = eg.tensors();
    for (auto& t : hg.tensors()) grads.push_back(t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      INFO(params[i].name);
      CHECK(testing::best_step_error(loss, *params[i].tensor, *grads[i].tensor) <= 1e-6);
    }
  }

  TEST_CASE("a separable toy task is learned") {
    auto lib = make_library(8, 3);
    const auto data = toy_data(24, 8);
    TrainConfig c = quick_config();
    c.epochs = 40;
    c.lr = 1e-2;
    c.inject = false;
    const auto plain = train_task(data, EncoderState::init(tiny_encoder(), 1), Heads::init(8, 2), nullptr, lib, c);
    CHECK(accuracy(plain, data, *lib, c.n_anchors, false) >= 0.95);

    c.inject = true;
    const auto injected = train_task(data, EncoderState::init(tiny_encoder(), 1), Heads::init(8, 2), nullptr, lib, c);
    CHECK(injected.log.back().loss_cls < 0.5 * injected.log.front().loss_cls);
  }

  TEST_CASE("distillation weight keeps the encoder near its teacher") {
    auto lib = make_library(8, 3);
    const auto data = toy_data(8, 9);
    const EncoderState start = EncoderState::init(tiny_encoder(), 1);
    const TaskSnapshot prev{std::make_shared<const EncoderState>(start), lib};
    TrainConfig c = quick_config();
    c.epochs = 4;
    c.lr = 5e-3;
    auto drift = [&](double mu2) {
      c.mu2 = mu2;
      const auto out = train_task(data, start, Heads::init(8, 2), &prev, lib, c);
      double d = 0;
      for (const auto& s : data)
        d += (forward(s.image, Mat(), out.encoder).feature - forward(s.image, Mat(), start).feature).squaredNorm();
      return d;
    };
    CHECK(drift(1e3) < drift(0.0));
  }

  TEST_CASE("training input validation") {
    auto lib = make_library(8, 3);
    auto data = toy_data(2, 10);
    const EncoderState enc = EncoderState::init(tiny_encoder(), 1);
    data[0].y_ind = {1, 0, 0, 0, 0};
    CHECK_ERROR_KIND(train_task(data, enc, Heads::init(8, 1), nullptr, lib, quick_config()), ErrorKind::InvalidInput);
    data = toy_data(2, 10);
    data[1].indicators.anomaly.reset();
    CHECK_ERROR_KIND(train_task(data, enc, Heads::init(8, 1), nullptr, lib, quick_config()), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(train_task(toy_data(2, 1), enc, Heads::init(8, 1), nullptr, make_library(6, 1), quick_config()),
                     ErrorKind::InvalidInput);
    TrainConfig c = quick_config();
    c.warmup = 9;
    CHECK_ERROR_KIND(c.validate(), ErrorKind::InvalidInput);
  }

  TEST_CASE("heads checkpoint round trip") {
    testing::TempDir dir("heads");
    const Heads h = Heads::init(8, 11);
    h.save(dir / "h.aifk");
    CHECK(fingerprint(Heads::load(dir / "h.aifk")) == fingerprint(h));
  }
}
