#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "aifind/anchors.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace aifind;

namespace {

Embedding random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Embedding v(d);
  for (auto& x : v) x = g(rng);
  const double n = oracle::norm(v);
  for (auto& x : v) x /= n;
  return v;
}

AnchorLibrary random_library(std::size_t d, std::mt19937_64& rng) {
  std::array<Anchor, kChannelCount> anchors;
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const std::string name = channel_name(channels()[i]);
    anchors[i] = {channels()[i], {"real " + name, "fake " + name, random_unit(d, rng), random_unit(d, rng)}};
  }
  return AnchorLibrary(anchors);
}

IndicatorMatrix scored(const std::array<double, kChannelCount>& anomaly) {
  IndicatorMatrix m;
  m.anomaly = anomaly;
  return m;
}

std::vector<std::size_t> indices(const std::vector<MatchedAnchor>& v) {
  std::vector<std::size_t> out;
  for (const auto& m : v) out.push_back(channel_index(m.channel));
  return out;
}

}  // namespace

TEST_SUITE("anchors") {
  TEST_CASE("anchor selection matches exhaustive enumeration") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> kdist(1, 6), sdist(1, 5);
    for (int inst = 0; inst < 30; ++inst) {
      std::vector<TextCandidatePair> cands(static_cast<std::size_t>(kdist(rng)));
      for (auto& c : cands) c = {"r", "f", random_unit(12, rng), random_unit(12, rng)};
      SupportSet support(static_cast<std::size_t>(sdist(rng)));
      for (auto& s : support) s = {random_unit(12, rng), random_unit(12, rng)};
      CHECK(select_anchor_index(cands, support) == oracle::best_candidate(cands, support));
    }
  }

  TEST_CASE("ties resolve to the lowest index") {
    std::mt19937_64 rng(1);
    const Embedding a = random_unit(8, rng), b = random_unit(8, rng);
    std::vector<TextCandidatePair> cands = {{"r0", "f0", a, b}, {"r1", "f1", a, b}};
    SupportSet support = {{a, b}};
    CHECK(select_anchor_index(cands, support) == 0);
    CHECK(candidate_score(cands[0], support) == doctest::Approx(2.0));
  }

  TEST_CASE("selection is invariant to uniform support rescaling") {
    std::mt19937_64 rng(12);
    std::vector<TextCandidatePair> cands(5);
    for (auto& c : cands) c = {"r", "f", random_unit(10, rng), random_unit(10, rng)};
    SupportSet support(4);
    for (auto& s : support) s = {random_unit(10, rng), random_unit(10, rng)};
    const std::size_t base = select_anchor_index(cands, support);
    for (auto& s : support) {
      for (auto& x : s.real) x *= 3.7;
      for (auto& x : s.fake) x *= 3.7;
    }
    CHECK(select_anchor_index(cands, support) == base);
  }

  TEST_CASE("build_library requires every channel") {
    std::mt19937_64 rng(2);
    CandidateSets cands;
    SupportSets support;
    for (const Channel c : channels()) {
      cands[c] = {{"r", "f", random_unit(6, rng), random_unit(6, rng)}};
      support[c] = {{random_unit(6, rng), random_unit(6, rng)}};
    }
    const AnchorLibrary lib = build_library(cands, support);
    CHECK(lib.dim() == 6);
    cands.erase(channels()[4]);
    CHECK_ERROR_KIND(build_library(cands, support), ErrorKind::IncompleteLibrary);
  }

  TEST_CASE("library rejects non-unit embeddings") {
    std::mt19937_64 rng(6);
    std::array<Anchor, kChannelCount> anchors;
    for (std::size_t i = 0; i < kChannelCount; ++i)
      anchors[i] = {channels()[i], {"r", "f", random_unit(4, rng), random_unit(4, rng)}};
    anchors[3].pair.fake_embedding[0] += 0.1;
    CHECK_ERROR_KIND(AnchorLibrary{anchors}, ErrorKind::InvalidInput);
  }

  TEST_CASE("static matching") {
    std::mt19937_64 rng(7);
    const AnchorLibrary lib = random_library(8, rng);
    std::array<double, kChannelCount> a{};
    std::iota(a.begin(), a.end(), 0.0);
    const auto fake = match_static(scored(a), lib, Label::fake, 3);
    CHECK(indices(fake) == std::vector<std::size_t>{17, 16, 15});
    CHECK(fake[0].text == lib.at(17).pair.fake_text);
    CHECK(fake[0].polarity == Label::fake);
    const auto real = match_static(scored(a), lib, Label::real, 2);
    CHECK(indices(real) == std::vector<std::size_t>{0, 1});
    CHECK(real[1].embedding == lib.at(1).pair.real_embedding);

    std::array<double, kChannelCount> flat{};
    CHECK(indices(match_static(scored(flat), lib, Label::fake, 3)) == std::vector<std::size_t>{0, 1, 2});

    std::array<double, kChannelCount> distinct{};
    std::uniform_real_distribution<double> u(-3, 3);
    for (auto& v : distinct) v = u(rng);
    const auto f9 = indices(match_static(scored(distinct), lib, Label::fake, 9));
    const auto r9 = indices(match_static(scored(distinct), lib, Label::real, 9));
    std::set<std::size_t> all(f9.begin(), f9.end());
    all.insert(r9.begin(), r9.end());
    CHECK(all.size() == 18);

    CHECK_ERROR_KIND(match_static(IndicatorMatrix{}, lib, Label::fake, 3), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(match_static(scored(a), lib, Label::fake, 0), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(match_static(scored(a), lib, Label::fake, 19), ErrorKind::InvalidInput);
  }

  TEST_CASE("dynamic matching equals a brute-force cosine sort") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const AnchorLibrary lib = random_library(10, rng);
      const Embedding f = random_unit(10, rng);
      const Label label = trial % 2 ? Label::fake : Label::real;
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t i = 0; i < 18; ++i) {
        const Embedding& e = label == Label::fake ? lib.at(i).pair.fake_embedding : lib.at(i).pair.real_embedding;
        ranked.push_back({oracle::dot(f, e) / (oracle::norm(f) * oracle::norm(e)), i});
      }
      std::stable_sort(ranked.begin(), ranked.end(), [](auto& x, auto& y) { return x.first > y.first; });
      const auto got = indices(match_dynamic(f, lib, label, 5));
      for (std::size_t k = 0; k < 5; ++k) CHECK(got[k] == ranked[k].second);
    }
  }

  TEST_CASE("dynamic matching edge cases") {
    std::mt19937_64 rng(9);
    const AnchorLibrary lib = random_library(8, rng);
    const auto top = match_dynamic(lib.at(5).pair.fake_embedding, lib, Label::fake, 1);
    CHECK(channel_index(top[0].channel) == 5);
    CHECK(top[0].score == doctest::Approx(1.0));
    CHECK_ERROR_KIND(match_dynamic(Embedding(8, 0.0), lib, Label::fake, 3), ErrorKind::DegenerateFeature);

    // orthogonal feature: all cosines zero, fixed order wins
    std::array<Anchor, kChannelCount> anchors;
    for (std::size_t i = 0; i < kChannelCount; ++i) {
      Embedding e(4, 0.0);
      e[0] = 1.0;
      anchors[i] = {channels()[i], {"r", "f", e, e}};
    }
    const AnchorLibrary axis(anchors);
    CHECK(indices(match_dynamic({0.0, 1.0, 0.0, 0.0}, axis, Label::real, 3)) == std::vector<std::size_t>{0, 1, 2});
  }

  TEST_CASE("label-free matching picks the better polarity") {
    std::mt19937_64 rng(10);
    const AnchorLibrary lib = random_library(8, rng);
    const auto real = match_label_free(lib.at(2).pair.real_embedding, lib, 3);
    CHECK(real[0].polarity == Label::real);
    CHECK(channel_index(real[0].channel) == 2);
    for (int trial = 0; trial < 20; ++trial) {
      const Embedding f = random_unit(8, rng);
      double sf = 0, sr = 0;
      for (const auto& m : match_dynamic(f, lib, Label::fake, 3)) sf += m.score;
      for (const auto& m : match_dynamic(f, lib, Label::real, 3)) sr += m.score;
      CHECK(match_label_free(f, lib, 3)[0].polarity == (sr > sf ? Label::real : Label::fake));
    }
  }

  TEST_CASE("toy embedding") {
    const Embedding a = toy_embed(Dimension::blur, Region::mouth, Label::fake, 1, 48);
    CHECK(a == toy_embed(Dimension::blur, Region::mouth, Label::fake, 1, 48));
    CHECK(std::abs(oracle::norm(a) - 1.0) <= 1e-9);
    const Embedding b = toy_embed(Dimension::blur, Region::mouth, Label::fake, 2, 48);
    const Embedding r = toy_embed(Dimension::blur, Region::mouth, Label::real, 1, 48);
    CHECK(oracle::dot(a, r) < oracle::dot(a, b));
    const std::size_t block = channel_index({Region::mouth, Dimension::blur});
    CHECK(a[2 * block] > 0.5);
    CHECK(a[2 * block + 1] > 0.5);
    CHECK(r[2 * block + 1] < -0.5);
    CHECK_ERROR_KIND(toy_embed(Dimension::blur, Region::mouth, Label::fake, 1, 39), ErrorKind::InvalidInput);
    CHECK_ERROR_KIND(toy_embed(Dimension::blur, Region::jawline, Label::fake, 1, 48), ErrorKind::InvalidInput);
  }

  TEST_CASE("library, candidate and support files round trip") {
    testing::TempDir dir("lib");
    std::mt19937_64 rng(13);
    const AnchorLibrary lib = random_library(6, rng);
    save_library(lib, dir / "lib.txt", dir / "lib.bin");
    const AnchorLibrary back = load_library(dir / "lib.txt", dir / "lib.bin");
    for (std::size_t i = 0; i < 18; ++i) {
      CHECK(back.at(i).pair.fake_text == lib.at(i).pair.fake_text);
      CHECK(back.at(i).pair.real_embedding == lib.at(i).pair.real_embedding);
    }

    CandidateSets cands;
    SupportSets support;
    for (const Channel c : channels()) {
      cands[c] = {{"r|a", "f", random_unit(6, rng), random_unit(6, rng)}, {"r2", "f2", random_unit(6, rng), random_unit(6, rng)}};
      support[c] = {{random_unit(6, rng), random_unit(6, rng)}};
    }
    CHECK_ERROR_KIND(save_candidates(cands, dir / "c.txt", dir / "c.bin"), ErrorKind::InvalidInput);
    for (auto& [c, list] : cands) list[0].real_text = "plain";
    save_candidates(cands, dir / "c.txt", dir / "c.bin");
    save_supports(support, dir / "s.txt", dir / "s.bin");
    const auto c2 = load_candidates(dir / "c.txt", dir / "c.bin");
    const auto s2 = load_supports(dir / "s.txt", dir / "s.bin");
    CHECK(c2.size() == 18);
    CHECK(c2.at(channels()[3])[1].fake_embedding == cands.at(channels()[3])[1].fake_embedding);
    CHECK(s2.at(channels()[7])[0].real == support.at(channels()[7])[0].real);

    const auto rows = read_embedding_sidecar(dir / "lib.bin");
    CHECK(rows.size() == 36);
    CHECK_ERROR_KIND(read_embedding_sidecar(dir / "lib.txt"), ErrorKind::FormatError);
  }
}
