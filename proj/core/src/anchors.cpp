#include "aifind/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "aifind/binary_io.hpp"
#include "aifind/error.hpp"

namespace aifind {

std::string_view to_string(Label l) { return l == Label::fake ? "fake" : "real"; }

namespace {

double norm2(const Embedding& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_unit(const Embedding& v, std::size_t dim, const std::string& what) {
  require(v.size() == dim, ErrorKind::InvalidInput,
          what + ": embedding dimension " + std::to_string(v.size()) + " != " + std::to_string(dim));
  require(std::abs(norm2(v) - 1.0) <= AnchorLibrary::kUnitTolerance, ErrorKind::InvalidInput,
          what + ": embedding is not unit length");
}

}  // namespace

AnchorLibrary::AnchorLibrary(std::array<Anchor, kChannelCount> anchors) : anchors_(std::move(anchors)) {
  dim_ = anchors_[0].pair.real_embedding.size();
  require(dim_ > 0, ErrorKind::InvalidInput, "anchor embeddings must be non-empty");
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const auto& a = anchors_[i];
    require(a.channel == channels()[i], ErrorKind::InvalidInput,
            "anchor " + std::to_string(i) + " is not stored in channel order");
    check_unit(a.pair.real_embedding, dim_, channel_name(a.channel) + " real");
    check_unit(a.pair.fake_embedding, dim_, channel_name(a.channel) + " fake");
  }
}

double cosine(const Embedding& a, const Embedding& b) {
  require(a.size() == b.size(), ErrorKind::InvalidInput, "cosine of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double candidate_score(const TextCandidatePair& candidate, const SupportSet& support) {
  double s = 0.0;
  for (const auto& ex : support)
    s += cosine(candidate.fake_embedding, ex.fake) + cosine(candidate.real_embedding, ex.real);
  return s;
}

std::size_t select_anchor_index(const std::vector<TextCandidatePair>& candidates, const SupportSet& support) {
  require(!candidates.empty(), ErrorKind::InvalidInput, "anchor selection needs at least one candidate");
  require(!support.empty(), ErrorKind::InvalidInput, "anchor selection needs a non-empty support set");
  std::size_t best = 0;
  double best_score = candidate_score(candidates[0], support);
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    const double s = candidate_score(candidates[k], support);
    if (s > best_score) {
      best = k;
      best_score = s;
    }
  }
  return best;
}

Anchor select_anchor(Channel channel, const std::vector<TextCandidatePair>& candidates, const SupportSet& support) {
  require(is_valid_channel(channel), ErrorKind::InvalidInput, "anchor channel outside the indicator table");
  return Anchor{channel, candidates[select_anchor_index(candidates, support)]};
}

AnchorLibrary build_library(const CandidateSets& candidates, const SupportSets& supports) {
  std::array<Anchor, kChannelCount> anchors;
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const Channel c = channels()[i];
    const auto cit = candidates.find(c);
    const auto sit = supports.find(c);
    require(cit != candidates.end() && sit != supports.end(), ErrorKind::IncompleteLibrary,
            "no candidates or support for channel " + channel_name(c));
    anchors[i] = select_anchor(c, cit->second, sit->second);
  }
  return AnchorLibrary(std::move(anchors));
}

namespace {

void check_count(std::size_t n) {
  require(n >= 1 && n <= kChannelCount, ErrorKind::InvalidInput,
          "anchor count must be in [1, 18], got " + std::to_string(n));
}

// Stable sort of channel indices keeps the fixed channel order among ties.
std::vector<MatchedAnchor> take_ranked(const AnchorLibrary& lib, Label label, const std::array<double, kChannelCount>& scores,
                                       bool descending, std::size_t n) {
  std::array<std::size_t, kChannelCount> order;
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  std::vector<MatchedAnchor> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Anchor& a = lib.at(order[k]);
    out.push_back({a.channel, label, a.text(label), a.embedding(label), scores[order[k]]});
  }
  return out;
}

std::array<double, kChannelCount> cosine_scores(const Embedding& feature, const AnchorLibrary& lib, Label label) {
  require(feature.size() == lib.dim(), ErrorKind::InvalidInput, "feature dimension does not match the library");
  require(norm2(feature) > 0.0, ErrorKind::DegenerateFeature, "zero feature vector cannot be matched");
  std::array<double, kChannelCount> s{};
  for (std::size_t i = 0; i < kChannelCount; ++i) s[i] = cosine(feature, lib.at(i).embedding(label));
  return s;
}

}  // namespace

std::vector<MatchedAnchor> match_static(const IndicatorMatrix& mtx, const AnchorLibrary& lib, Label label,
                                        std::size_t n) {
  check_count(n);
  require(mtx.anomaly.has_value(), ErrorKind::InvalidInput, "static matching needs anomaly scores");
  return take_ranked(lib, label, *mtx.anomaly, label == Label::fake, n);
}

std::vector<MatchedAnchor> match_dynamic(const Embedding& feature, const AnchorLibrary& lib, Label label,
                                         std::size_t n) {
  check_count(n);
  return take_ranked(lib, label, cosine_scores(feature, lib, label), true, n);
}

std::vector<MatchedAnchor> match_label_free(const Embedding& feature, const AnchorLibrary& lib, std::size_t n) {
  auto fake = match_dynamic(feature, lib, Label::fake, n);
  auto real = match_dynamic(feature, lib, Label::real, n);
  auto total = [](const std::vector<MatchedAnchor>& v) {
    double s = 0.0;
    for (const auto& m : v) s += m.score;
    return s;
  };
  return total(real) > total(fake) ? real : fake;
}

Embedding toy_embed(Dimension dimension, Region region, Label polarity, std::uint64_t seed, std::size_t dim) {
  require(dim >= kToyEmbedMinDim, ErrorKind::InvalidInput,
          "toy_embed needs D >= 40, got " + std::to_string(dim));
  const std::size_t block = channel_index({region, dimension});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(polarity)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  Embedding v(dim);
  for (double& x : v) x = noise(rng);
  v[2 * block] = 1.0;
  v[2 * block + 1] = polarity == Label::fake ? 1.0 : -1.0;
  const double n = norm2(v);
  for (double& x : v) x /= n;
  return v;
}

void write_embedding_sidecar(const std::vector<Embedding>& rows, std::size_t dim, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("AIFD");
  w.u32(static_cast<std::uint32_t>(rows.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& r : rows) {
    require(r.size() == dim, ErrorKind::InvalidInput, "sidecar rows must share one dimension");
    w.f64s(r);
  }
  w.close();
}

std::vector<Embedding> read_embedding_sidecar(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("AIFD");
  const auto count = r.u32();
  const auto dim = r.u32();
  require(dim > 0, ErrorKind::FormatError, "sidecar declares D = 0: " + path.string());
  std::vector<Embedding> rows;
  rows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) rows.push_back(r.f64s(dim));
  require(r.at_end(), ErrorKind::FormatError, "trailing bytes in sidecar " + path.string());
  return rows;
}

namespace {

std::vector<std::string> split_bar(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, '|')) out.push_back(cell);
  if (!line.empty() && line.back() == '|') out.emplace_back();
  return out;
}

void check_text(const std::string& s) {
  require(s.find('|') == std::string::npos && s.find('\n') == std::string::npos, ErrorKind::InvalidInput,
          "anchor text must not contain '|' or newlines: " + s);
}

std::size_t parse_row(const std::string& s, std::size_t rows, const std::filesystem::path& path) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), ErrorKind::FormatError, "bad row offset '" + s + "' in " + path.string());
  require(v < rows, ErrorKind::FormatError, "row offset out of range in " + path.string());
  return v;
}

std::vector<std::vector<std::string>> read_records(const std::filesystem::path& path, std::size_t fields) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IOError, "cannot read " + path.string());
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_bar(line);
    require(f.size() == fields, ErrorKind::FormatError,
            "expected " + std::to_string(fields) + " '|' fields in " + path.string() + ": " + line);
    out.push_back(std::move(f));
  }
  return out;
}

void write_pair_records(const std::vector<std::pair<Channel, const TextCandidatePair*>>& records,
                        const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  require(!records.empty(), ErrorKind::InvalidInput, "nothing to write");
  const std::size_t dim = records.front().second->real_embedding.size();
  std::vector<Embedding> rows;
  std::ofstream out(index, std::ios::trunc);
  require(out.good(), ErrorKind::IOError, "cannot write " + index.string());
  for (const auto& [c, p] : records) {
    check_text(p->real_text);
    check_text(p->fake_text);
    out << to_string(c.dimension) << '|' << to_string(c.region) << '|' << p->real_text << '|' << p->fake_text << '|'
        << rows.size() << '|' << rows.size() + 1 << '\n';
    rows.push_back(p->real_embedding);
    rows.push_back(p->fake_embedding);
  }
  require(out.good(), ErrorKind::IOError, "write failed: " + index.string());
  write_embedding_sidecar(rows, dim, sidecar);
}

std::vector<std::pair<Channel, TextCandidatePair>> read_pair_records(const std::filesystem::path& index,
                                                                     const std::filesystem::path& sidecar) {
  const auto rows = read_embedding_sidecar(sidecar);
  std::vector<std::pair<Channel, TextCandidatePair>> out;
  for (auto& f : read_records(index, 6)) {
    const Channel c{parse_region(f[1]), parse_dimension(f[0])};
    require(is_valid_channel(c), ErrorKind::FormatError, "invalid channel " + channel_name(c) + " in " + index.string());
    TextCandidatePair p{f[2], f[3], rows[parse_row(f[4], rows.size(), index)], rows[parse_row(f[5], rows.size(), index)]};
    check_unit(p.real_embedding, rows.front().size(), channel_name(c) + " real (" + index.string() + ")");
    check_unit(p.fake_embedding, rows.front().size(), channel_name(c) + " fake (" + index.string() + ")");
    out.emplace_back(c, std::move(p));
  }
  return out;
}

}  // namespace

void save_library(const AnchorLibrary& lib, const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  std::vector<std::pair<Channel, const TextCandidatePair*>> records;
  for (const auto& a : lib.anchors()) records.emplace_back(a.channel, &a.pair);
  write_pair_records(records, index, sidecar);
}

AnchorLibrary load_library(const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  auto records = read_pair_records(index, sidecar);
  require(records.size() == kChannelCount, ErrorKind::FormatError,
          "library must have exactly 18 records, found " + std::to_string(records.size()));
  std::array<Anchor, kChannelCount> anchors;
  std::array<bool, kChannelCount> seen{};
  for (auto& [c, p] : records) {
    const auto i = channel_index(c);
    require(!seen[i], ErrorKind::FormatError, "duplicate library record for " + channel_name(c));
    seen[i] = true;
    anchors[i] = Anchor{c, std::move(p)};
  }
  return AnchorLibrary(std::move(anchors));
}

void save_candidates(const CandidateSets& sets, const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  std::vector<std::pair<Channel, const TextCandidatePair*>> records;
  for (const auto& [c, list] : sets)
    for (const auto& p : list) records.emplace_back(c, &p);
  write_pair_records(records, index, sidecar);
}

CandidateSets load_candidates(const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  CandidateSets out;
  for (auto& [c, p] : read_pair_records(index, sidecar)) out[c].push_back(std::move(p));
  return out;
}

void save_supports(const SupportSets& sets, const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  std::vector<Embedding> rows;
  std::size_t dim = 0;
  std::ofstream out(index, std::ios::trunc);
  require(out.good(), ErrorKind::IOError, "cannot write " + index.string());
  for (const auto& [c, set] : sets) {
    for (const auto& ex : set) {
      dim = ex.real.size();
      out << to_string(c.dimension) << '|' << to_string(c.region) << '|' << rows.size() << '|' << rows.size() + 1 << '\n';
      rows.push_back(ex.real);
      rows.push_back(ex.fake);
    }
  }
  require(!rows.empty(), ErrorKind::InvalidInput, "nothing to write");
  write_embedding_sidecar(rows, dim, sidecar);
}

SupportSets load_supports(const std::filesystem::path& index, const std::filesystem::path& sidecar) {
  const auto rows = read_embedding_sidecar(sidecar);
  SupportSets out;
  for (auto& f : read_records(index, 4)) {
    const Channel c{parse_region(f[1]), parse_dimension(f[0])};
    require(is_valid_channel(c), ErrorKind::FormatError, "invalid channel " + channel_name(c) + " in " + index.string());
    SupportExemplar ex{rows[parse_row(f[2], rows.size(), index)], rows[parse_row(f[3], rows.size(), index)]};
    check_unit(ex.real, rows.front().size(), "support " + channel_name(c));
    check_unit(ex.fake, rows.front().size(), "support " + channel_name(c));
    out[c].push_back(std::move(ex));
  }
  return out;
}

}  // namespace aifind
