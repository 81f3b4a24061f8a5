#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aifind/image.hpp"

namespace aifind {

enum class Region { eyes, nose, cheeks, mouth, jawline, boundary };
enum class Dimension { blur, color, structure, texture, boundary };

inline constexpr std::size_t kRegionCount = 6;
inline constexpr std::size_t kDimensionCount = 5;
inline constexpr std::size_t kChannelCount = 18;

struct Channel {
  Region region;
  Dimension dimension;
  friend bool operator==(const Channel&, const Channel&) = default;
  friend auto operator<=>(const Channel&, const Channel&) = default;
};

/// The valid (region, dimension) pairs in fixed region-major, dimension-minor
/// order. This order is also the tie-break order for every ranking.
const std::array<Channel, kChannelCount>& channels();
std::size_t channel_index(Channel c);  // InvalidInput for pairs outside the table
bool is_valid_channel(Channel c);

std::string_view to_string(Region r);
std::string_view to_string(Dimension d);
std::string channel_name(Channel c);  // "region/dimension"
Region parse_region(std::string_view s);
Dimension parse_dimension(std::string_view s);

/// Masks for the six facial regions plus the skin reference, all sized to one image.
class RegionMaskSet {
 public:
  RegionMaskSet(std::array<Mask, kRegionCount> regions, Mask skin);

  const Mask& region(Region r) const { return regions_[static_cast<std::size_t>(r)]; }
  const Mask& skin() const { return skin_; }
  int width() const { return skin_.width(); }
  int height() const { return skin_.height(); }

 private:
  std::array<Mask, kRegionCount> regions_;
  Mask skin_;
};

/// Reads `region=path` lines (paths relative to the manifest's directory).
RegionMaskSet load_mask_manifest(const std::filesystem::path& manifest);
void save_mask_manifest(const RegionMaskSet& masks, const std::filesystem::path& dir);

struct IndicatorMatrix {
  std::string image_id;
  std::array<double, kChannelCount> raw{};
  std::optional<std::array<double, kChannelCount>> anomaly;

  double raw_at(Channel c) const { return raw[channel_index(c)]; }
  double anomaly_at(Channel c) const;
};

// Individual indicators, evaluated on an RGB or gray image.
double blur_indicator(const Image& img, const Mask& mask);
double color_indicator(const Image& img, const Mask& region, const Mask& skin);
double structural_indicator(const Image& img, const Mask& region, const Mask& skin);
double texture_indicator(const Image& img, const Mask& mask);
double boundary_indicator(const Image& img, const Mask& mask);

// Pieces of the structural indicator, exposed for oracle tests.
Field crop_resize_bilinear(const Field& gray, const Mask::Box& box, int out_side);
void minmax_normalize(Field& patch);  // constant patch -> all 0.5
double global_ssim(const Field& a, const Field& b);
inline constexpr int kStructurePatchSide = 32;
inline constexpr int kTextureLevels = 64;
int quantize_level(double gray);

IndicatorMatrix compute_indicator_matrix(const Image& img, const RegionMaskSet& masks,
                                         std::string image_id = {});

/// Robust per-channel standardization: anomaly = polarity * (raw - median) / MAD.
class ChannelNormalizer {
 public:
  static constexpr double kMadFloor = 1e-9;

  ChannelNormalizer(std::array<double, kChannelCount> median, std::array<double, kChannelCount> mad);

  static ChannelNormalizer fit(const std::vector<IndicatorMatrix>& calibration);

  /// Blur (sharpness-like) and structure (similarity-like) read low values as anomalous.
  static double polarity(Dimension d);

  const std::array<double, kChannelCount>& median() const { return median_; }
  const std::array<double, kChannelCount>& mad() const { return mad_; }

  double anomaly(std::size_t channel, double raw) const;

 private:
  std::array<double, kChannelCount> median_;
  std::array<double, kChannelCount> mad_;
};

IndicatorMatrix anomaly_scores(IndicatorMatrix mtx, const ChannelNormalizer& norm);

// CSV: image_id,region,dimension,raw,anomaly (six decimals; "nan" when absent).
void write_indicator_csv(const std::vector<IndicatorMatrix>& rows, const std::filesystem::path& path);
std::vector<IndicatorMatrix> read_indicator_csv(const std::filesystem::path& path);

}  // namespace aifind
