#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aifind/indicators.hpp"

namespace aifind {

using Embedding = std::vector<double>;

enum class Label { real = 0, fake = 1 };
std::string_view to_string(Label l);

struct TextCandidatePair {
  std::string real_text;
  std::string fake_text;
  Embedding real_embedding;
  Embedding fake_embedding;
};

struct SupportExemplar {
  Embedding real;
  Embedding fake;
};
using SupportSet = std::vector<SupportExemplar>;

struct Anchor {
  Channel channel;
  TextCandidatePair pair;

  const Embedding& embedding(Label polarity) const {
    return polarity == Label::fake ? pair.fake_embedding : pair.real_embedding;
  }
  const std::string& text(Label polarity) const {
    return polarity == Label::fake ? pair.fake_text : pair.real_text;
  }
};

/// One anchor per valid channel, stored in channel order. Immutable once built.
class AnchorLibrary {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  AnchorLibrary(std::array<Anchor, kChannelCount> anchors);

  std::size_t dim() const { return dim_; }
  const Anchor& at(Channel c) const { return anchors_[channel_index(c)]; }
  const Anchor& at(std::size_t index) const { return anchors_[index]; }
  const std::array<Anchor, kChannelCount>& anchors() const { return anchors_; }

 private:
  std::array<Anchor, kChannelCount> anchors_;
  std::size_t dim_ = 0;
};

/// Anchor retrieved for one image, with the polarity-specific text and embedding.
struct MatchedAnchor {
  Channel channel;
  Label polarity;
  std::string text;
  Embedding embedding;
  double score;  // anomaly (static) or cosine (dynamic)
};

double cosine(const Embedding& a, const Embedding& b);

/// Candidate score: sum over support exemplars of cos(fake, x_f) + cos(real, x_r).
double candidate_score(const TextCandidatePair& candidate, const SupportSet& support);

/// Argmax of candidate_score; the lowest index wins ties.
std::size_t select_anchor_index(const std::vector<TextCandidatePair>& candidates, const SupportSet& support);
Anchor select_anchor(Channel channel, const std::vector<TextCandidatePair>& candidates, const SupportSet& support);

using CandidateSets = std::map<Channel, std::vector<TextCandidatePair>>;
using SupportSets = std::map<Channel, SupportSet>;

AnchorLibrary build_library(const CandidateSets& candidates, const SupportSets& supports);

/// fake: N highest anomaly channels with fake texts; real: N lowest with real texts.
std::vector<MatchedAnchor> match_static(const IndicatorMatrix& mtx, const AnchorLibrary& lib, Label label,
                                        std::size_t n);

/// Top-N anchors by cos(feature, polarity embedding).
std::vector<MatchedAnchor> match_dynamic(const Embedding& feature, const AnchorLibrary& lib, Label label,
                                         std::size_t n);

/// Label-free retrieval used at evaluation: the polarity whose top-N set has
/// the larger summed cosine wins (fake on exact ties).
std::vector<MatchedAnchor> match_label_free(const Embedding& feature, const AnchorLibrary& lib, std::size_t n);

inline constexpr std::size_t kToyEmbedMinDim = 40;

/// Deterministic stand-in text embedding. Coordinates (2b, 2b+1), b the
/// channel index, carry (+1,+1) for fake and (+1,-1) for real; the rest is
/// seed-keyed noise of amplitude 0.05. Unit length.
Embedding toy_embed(Dimension dimension, Region region, Label polarity, std::uint64_t seed, std::size_t dim);

// Library files: text index `dimension|region|real_text|fake_text|real_row|fake_row`
// plus a sidecar of f64 rows (magic AIFD, u32 count, u32 D, count*D values).
// The offsets are row indices into the sidecar.
void save_library(const AnchorLibrary& lib, const std::filesystem::path& index, const std::filesystem::path& sidecar);
AnchorLibrary load_library(const std::filesystem::path& index, const std::filesystem::path& sidecar);

// Candidate files use the library layout with any number of records per channel.
void save_candidates(const CandidateSets& sets, const std::filesystem::path& index, const std::filesystem::path& sidecar);
CandidateSets load_candidates(const std::filesystem::path& index, const std::filesystem::path& sidecar);

// Support files: `dimension|region|real_row|fake_row` records plus a sidecar.
void save_supports(const SupportSets& sets, const std::filesystem::path& index, const std::filesystem::path& sidecar);
SupportSets load_supports(const std::filesystem::path& index, const std::filesystem::path& sidecar);

void write_embedding_sidecar(const std::vector<Embedding>& rows, std::size_t dim, const std::filesystem::path& path);
std::vector<Embedding> read_embedding_sidecar(const std::filesystem::path& path);

}  // namespace aifind
