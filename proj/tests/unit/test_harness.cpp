#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "aifind/harness.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace aifind;

namespace {

ProtocolConfig tiny_protocol() {
  KeyValueFile kv = KeyValueFile::parse(
      "tasks=2\nimage_side=32\npatch_size=8\ntrain_per_class=4\ntest_per_class=3\n"
      "d_model=8\nlayers=1\nheads=2\nmlp_ratio=2\napa_layers=1\nepochs=2\nbatch=4\nn_warmup=1\n"
      "n_anchors=2\nlr=0.001\nseed=3\n");
  return ProtocolConfig::from_kv(kv);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("auc matches pair counting") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> level(0, 5), bit(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> s(12);
      std::vector<int> y(12);
      for (int i = 0; i < 12; ++i) {
        s[i] = level(rng) / 5.0;
        y[i] = i < 2 ? i : bit(rng);
      }
      CHECK(std::abs(auc(s, y) - oracle::auc_pairs(s, y)) <= 1e-12);
    }
  }

  TEST_CASE("auc properties") {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y = {0, 0, 1, 1};
    CHECK(auc(s, y) == doctest::Approx(0.75));
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3 * v) - 7);
    CHECK(auc(t, y) == auc(s, y));
    CHECK(auc(std::vector<double>{0, 1}, std::vector<int>{0, 1}) == 1.0);
    CHECK(auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}) == 0.5);
    CHECK_ERROR_KIND(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ErrorKind::UndefinedMetric);
    CHECK_ERROR_KIND(auc(std::vector<double>{0.1, NAN}, std::vector<int>{0, 1}), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 2}), ErrorKind::InvalidInput);
  }

  TEST_CASE("generation is deterministic and paired") {
    SyntheticSpec spec;
    spec.image_side = 32;
    spec.train_per_class = 3;
    spec.test_per_class = 2;
    spec.seed = 9;
    const TaskDataset a = gen_synthetic_task(spec, 1), b = gen_synthetic_task(spec, 1);
    REQUIRE(a.train.size() == 6);
    CHECK(a.test.size() == 4);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].image == b.train[i].image);
    CHECK(a.train[0].id == "t2_train_real_0000");
    CHECK(a.train[1].label == Label::fake);
    CHECK(a.train[1].y_ind == IndVector{0, 1, 0, 0, 1});
    CHECK(!(gen_synthetic_task(spec, 0).train[1].image == a.train[1].image));
    for (const auto& s : a.train) CHECK(s.indicators.anomaly.has_value());
  }

  TEST_CASE("mouth blur shows up in the mouth blur channel") {
    SyntheticSpec spec;
    spec.train_per_class = 40;
    spec.test_per_class = 2;
    spec.seed = 4;
    spec.recipes = {{{{Region::mouth, Dimension::blur}, 2.0}}};
    const TaskDataset d = gen_synthetic_task(spec, 0);
    const Channel ch{Region::mouth, Dimension::blur};
    int higher = 0;
    for (std::size_t i = 0; i < d.train.size(); i += 2)
      higher += d.train[i + 1].indicators.anomaly_at(ch) > d.train[i].indicators.anomaly_at(ch);
    CHECK(higher >= 38);
  }

  TEST_CASE("empty recipe leaves fakes identical to their reals") {
    SyntheticSpec spec;
    spec.image_side = 32;
    spec.train_per_class = 2;
    spec.test_per_class = 2;
    spec.recipes = {{}};
    const TaskDataset d = gen_synthetic_task(spec, 0);
    for (std::size_t i = 0; i < d.train.size(); i += 2) CHECK(d.train[i].image == d.train[i + 1].image);
  }

  TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.image_side = 30;
    CHECK_ERROR_KIND(spec.validate(), ErrorKind::InvalidInput);
    spec = SyntheticSpec{};
    spec.train_per_class = 1;
    CHECK_ERROR_KIND(spec.validate(), ErrorKind::InvalidInput);
    spec = SyntheticSpec{};
    spec.recipes = {{{{Region::jawline, Dimension::blur}, 1.0}}};
    CHECK_ERROR_KIND(gen_synthetic_task(spec, 0), ErrorKind::InvalidInput);
  }

  TEST_CASE("synthetic masks cover every region") {
    const RegionMaskSet m = synthetic_masks(64);
    for (Region r : {Region::eyes, Region::nose, Region::cheeks, Region::mouth, Region::jawline, Region::boundary})
      CHECK(m.region(r).count() > 0);
    CHECK(m.skin().count() > 0);
  }

  TEST_CASE("dataset round trip") {
    testing::TempDir dir("ds");
    SyntheticSpec spec;
    spec.image_side = 32;
    spec.train_per_class = 3;
    spec.test_per_class = 2;
    const TaskDataset d = gen_synthetic_task(spec, 2);
    save_dataset(d, dir / "task3");
    const TaskDataset back = load_dataset(dir / "task3");
    CHECK(back.task_index == 2);
    REQUIRE(back.train.size() == d.train.size());
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      CHECK(back.train[i].id == d.train[i].id);
      CHECK(back.train[i].image == d.train[i].image);
      CHECK(back.train[i].y_ind == d.train[i].y_ind);
      CHECK(back.train[i].indicators.anomaly == d.train[i].indicators.anomaly);
    }
  }

  TEST_CASE("protocol config") {
    CHECK_ERROR_KIND(ProtocolConfig::from_kv(KeyValueFile::parse("tasks=2\nlearning_rate=0.1\n")),
                     ErrorKind::InvalidInput);
    const ProtocolConfig c = tiny_protocol();
    const ProtocolConfig again = ProtocolConfig::from_kv(c.to_kv());
    CHECK(again.hash() == c.hash());
    CHECK(again.to_kv().canonical() == c.to_kv().canonical());
    ProtocolConfig d = c;
    d.train.lr = 0.002;
    CHECK(d.hash() != c.hash());
    d = c;
    d.ablations.no_ind = true;
    d.ablations.no_apa = true;
    const ProtocolConfig r = d.resolved();
    CHECK(r.train.mu1 == 0.0);
    CHECK(!r.train.inject);
    CHECK(r.data.seed == 3);
    CHECK(stage_seed(3, 1) != stage_seed(3, 2));
  }

  TEST_CASE("harness library") {
    const auto a = harness_library(8, 5), b = harness_library(8, 5);
    CHECK(a->dim() == 8);
    for (std::size_t i = 0; i < kChannelCount; ++i) CHECK(a->at(i).pair.fake_embedding == b->at(i).pair.fake_embedding);
    CHECK(harness_library(48, 5)->dim() == 48);
  }

  TEST_CASE("report layout") {
    testing::TempDir dir("rep");
    ProtocolResult r;
    r.auc = {{0.9}, {0.8, 0.95}};
    r.averages = {0.9, 0.875};
    r.config_hash = "abc";
    r.seed = 7;
    r.config_echo = "tasks=2\n";
    r.timings = {{"task1.train", 1.5}};
    report(r, dir / "out");
    CHECK(slurp(dir / "out" / "results.csv") ==
          "after_task,eval_task,auc\n1,1,0.900000\n2,1,0.800000\n2,2,0.950000\n");
    const std::string m = slurp(dir / "out" / "manifest.txt");
    CHECK(m.find("config_hash=abc\n") != std::string::npos);
    CHECK(m.find("after_task_2=0.875000\n") != std::string::npos);
    CHECK(m.find("task1.train=1.500000\n") != std::string::npos);
  }

  TEST_CASE("tiny protocol runs end to end") {
    const ProtocolResult r = run_protocol(tiny_protocol());
    REQUIRE(r.auc.size() == 2);
    CHECK(r.auc[1].size() == 2);
    for (const auto& row : r.auc)
      for (double v : row) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(r.logs.size() == 2);

    ProtocolConfig c = tiny_protocol();
    c.tasks = 1;
    c.ablations = {true, true, true};
    const ProtocolResult ab = run_protocol(c);
    CHECK(ab.auc.size() == 1);
    for (const auto& t : ab.timings) CHECK(t.stage.find("harmonize") == std::string::npos);
  }
}
