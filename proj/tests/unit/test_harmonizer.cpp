#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "aifind/harmonizer.hpp"
#include "support/expect.hpp"
#include "support/tempdir.hpp"

using namespace aifind;

namespace {

Eigen::VectorXd random_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(d);
  for (auto& x : v) x = g(rng);
  return v / v.norm();
}

TaskHeadArchive archive_of(std::initializer_list<Eigen::VectorXd> dirs, HeadKind kind = HeadKind::binary) {
  TaskHeadArchive a(kind);
  std::uint32_t id = 0;
  for (const auto& d : dirs) a.append({d, 1.0, kind, id++});
  return a;
}

double angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::acos(std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0));
}

}  // namespace

TEST_SUITE("harmonizer") {
  TEST_CASE("slerp endpoints and geometry") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd a = random_unit(6, rng), b = random_unit(6, rng);
      CHECK((slerp(a, b, 0.0) - a).norm() <= 1e-12);
      CHECK((slerp(a, b, 1.0) - b).norm() <= 1e-12);
      const double theta = angle(a, b);
      for (double t : {0.1, 0.25, 0.5, 0.9}) {
        const Eigen::VectorXd s = slerp(a, b, t);
        CHECK(std::abs(s.norm() - 1.0) <= 1e-12);
        CHECK(std::abs(angle(a, s) - t * theta) <= 1e-9);
        CHECK(std::abs(angle(s, b) - (1 - t) * theta) <= 1e-9);
      }
    }
  }

  TEST_CASE("slerp of orthogonal unit vectors at one half") {
    Eigen::VectorXd a(2), b(2);
    a << 1, 0;
    b << 0, 1;
    const Eigen::VectorXd s = slerp(a, b, 0.5);
    CHECK(s(0) == doctest::Approx(std::numbers::sqrt2 / 2));
    CHECK(s(1) == doctest::Approx(std::numbers::sqrt2 / 2));
    CHECK((slerp(a, a, 0.3) - a).norm() == 0.0);
    CHECK_ERROR_KIND(slerp(a, -a, 0.5), ErrorKind::UndefinedGeodesic);
    CHECK_ERROR_KIND(slerp(a, b, 1.5), ErrorKind::InvalidInput);
  }

  TEST_CASE("affinity weights form a distribution") {
    std::mt19937_64 rng(2);
    const auto arch = archive_of({random_unit(5, rng), random_unit(5, rng), random_unit(5, rng)});
    const Eigen::VectorXd cur = random_unit(5, rng);
    for (double tau : {0.01, 0.1, 1.0, 10.0}) {
      const Eigen::VectorXd w = affinity_weights(cur, arch, tau);
      CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
      CHECK(w.minCoeff() >= 0.0);
    }
    // most similar entry gets the most weight
    const auto near = archive_of({cur, -cur});
    const Eigen::VectorXd w = affinity_weights(cur, near, 0.1);
    CHECK(w(0) > w(1));
    CHECK_ERROR_KIND(affinity_weights(cur, TaskHeadArchive(HeadKind::binary), 0.1), ErrorKind::NoHistory);
    CHECK_ERROR_KIND(affinity_weights(cur, arch, 0.0), ErrorKind::InvalidInput);
  }

  TEST_CASE("global reference") {
    Eigen::VectorXd a(2), b(2);
    a << 1, 0;
    b << 0, 1;
    const auto arch = archive_of({a, b});
    Eigen::VectorXd w(2);
    w << 0.5, 0.5;
    const Eigen::VectorXd r = global_reference(arch, w);
    CHECK(r(0) == doctest::Approx(std::numbers::sqrt2 / 2));
    CHECK(std::abs(r.norm() - 1.0) <= 1e-12);
    CHECK_ERROR_KIND(global_reference(archive_of({a, Eigen::VectorXd(-a)}), w), ErrorKind::DegenerateReference);
  }

  TEST_CASE("adaptive interpolation factor") {
    Eigen::VectorXd a(2), b(2);
    a << 1, 0;
    b << 0.6, 0.8;
    CHECK(adaptive_t(a, b) == doctest::Approx(0.6));
    CHECK(adaptive_t(a, -b) == 0.0);
    CHECK(adaptive_t(a, a) == doctest::Approx(1.0));
  }

  TEST_CASE("aligned direction moves toward history") {
    std::mt19937_64 rng(3);
    for (auto method : {AlignMethod::slerp, AlignMethod::lerp, AlignMethod::ema, AlignMethod::wm}) {
      const Eigen::VectorXd h = random_unit(6, rng);
      Eigen::VectorXd cur = h + 0.5 * random_unit(6, rng);
      cur.normalize();
      const auto arch = archive_of({h});
      const Eigen::VectorXd out = align_direction(cur, arch, {method, 0.1, 0.9});
      CHECK(std::abs(out.norm() - 1.0) <= 1e-12);
      CHECK(angle(out, h) <= angle(cur, h) + 1e-12);
    }
    CHECK(parse_align_method("ema") == AlignMethod::ema);
    CHECK(to_string(AlignMethod::wm) == "wm");
    CHECK_ERROR_KIND(parse_align_method("nearest"), ErrorKind::InvalidInput);
  }

  TEST_CASE("slerp alignment with a single history entry") {
    // omega = 1, reference = history, t = cos(angle)
    Eigen::VectorXd h(2), cur(2);
    h << 1, 0;
    cur << 0.6, 0.8;
    const auto out = align_direction(cur, archive_of({h}), {});
    const Eigen::VectorXd expect = slerp(cur, h, 0.6);
    CHECK((out - expect).norm() <= 1e-12);
  }

  TEST_CASE("harmonize preserves norms and biases") {
    std::mt19937_64 rng(4);
    Heads heads = Heads::init(6, 3);
    HeadArchives arch;
    const Heads first = harmonize(heads, arch, 0, {});
    CHECK(first.bin_w == heads.bin_w);
    CHECK(first.ml_w == heads.ml_w);
    CHECK(arch.binary.size() == 1);
    CHECK(arch.multilabel.size() == 1);

    Heads next = Heads::init(6, 8);
    const Heads out = harmonize(next, arch, 1, {});
    CHECK(std::abs(out.bin_w.norm() - next.bin_w.norm()) <= 1e-12);
    CHECK(std::abs(out.ml_w.norm() - next.ml_w.norm()) <= 1e-12);
    CHECK(out.bin_b == next.bin_b);
    CHECK(out.ml_b == next.ml_b);
    CHECK(arch.binary.size() == 2);
    CHECK(arch.binary.entries()[1].task_id == 1);
  }

  TEST_CASE("failed harmonization leaves the archives untouched") {
    Heads heads = Heads::init(4, 3);
    HeadArchives arch;
    harmonize(heads, arch, 0, {});
    Heads bad = heads;
    bad.ml_w.setZero();
    CHECK_ERROR_KIND(harmonize(bad, arch, 1, {}), ErrorKind::InvalidInput);
    CHECK(arch.binary.size() == 1);
    CHECK(arch.multilabel.size() == 1);
  }

  TEST_CASE("archive validation and round trip") {
    testing::TempDir dir("arch");
    std::mt19937_64 rng(5);
    TaskHeadArchive a(HeadKind::binary);
    CHECK_ERROR_KIND(a.append({random_unit(4, rng) * 2.0, 1.0, HeadKind::binary, 0}), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(a.append({random_unit(4, rng), 1.0, HeadKind::multilabel, 0}), ErrorKind::InvalidInput);
    a.append({random_unit(4, rng), 1.0, HeadKind::binary, 0});
    CHECK_ERROR_KIND(a.append({random_unit(5, rng), 1.0, HeadKind::binary, 1}), ErrorKind::InvalidInput);

    HeadArchives arch;
    harmonize(Heads::init(6, 1), arch, 0, {});
    harmonize(Heads::init(6, 2), arch, 1, {});
    arch.save(dir / "a.aifh");
    const HeadArchives back = HeadArchives::load(dir / "a.aifh");
    CHECK(back.binary.size() == 2);
    CHECK(back.multilabel.size() == 2);
    CHECK(back.multilabel.entries()[1].flat == arch.multilabel.entries()[1].flat);
    CHECK(back.binary.entries()[0].norm == arch.binary.entries()[0].norm);
  }
}
