#include "aifind/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "aifind/error.hpp"
#include "aifind/kv_config.hpp"

namespace aifind {

const std::array<Channel, kChannelCount>& channels() {
  static const std::array<Channel, kChannelCount> table = [] {
    std::array<Channel, kChannelCount> t{};
    std::size_t i = 0;
    for (Region r : {Region::eyes, Region::nose, Region::cheeks, Region::mouth})
      for (Dimension d : {Dimension::blur, Dimension::color, Dimension::structure, Dimension::texture})
        t[i++] = {r, d};
    t[i++] = {Region::jawline, Dimension::boundary};
    t[i++] = {Region::boundary, Dimension::boundary};
    return t;
  }();
  return table;
}

bool is_valid_channel(Channel c) {
  const bool facial = c.region == Region::eyes || c.region == Region::nose ||
                      c.region == Region::cheeks || c.region == Region::mouth;
  return facial == (c.dimension != Dimension::boundary);
}

std::size_t channel_index(Channel c) {
  require(is_valid_channel(c), ErrorKind::InvalidInput, "channel outside the indicator table: " + channel_name(c));
  if (c.dimension == Dimension::boundary) return c.region == Region::jawline ? 16 : 17;
  return static_cast<std::size_t>(c.region) * 4 + static_cast<std::size_t>(c.dimension);
}

std::string_view to_string(Region r) {
  static constexpr std::string_view names[] = {"eyes", "nose", "cheeks", "mouth", "jawline", "boundary"};
  return names[static_cast<std::size_t>(r)];
}

std::string_view to_string(Dimension d) {
  static constexpr std::string_view names[] = {"blur", "color", "structure", "texture", "boundary"};
  return names[static_cast<std::size_t>(d)];
}

std::string channel_name(Channel c) {
  return std::string(to_string(c.region)) + "/" + std::string(to_string(c.dimension));
}

Region parse_region(std::string_view s) {
  for (std::size_t i = 0; i < kRegionCount; ++i)
    if (to_string(static_cast<Region>(i)) == s) return static_cast<Region>(i);
  fail(ErrorKind::InvalidInput, "unknown region '" + std::string(s) + "'");
}

Dimension parse_dimension(std::string_view s) {
  for (std::size_t i = 0; i < kDimensionCount; ++i)
    if (to_string(static_cast<Dimension>(i)) == s) return static_cast<Dimension>(i);
  fail(ErrorKind::InvalidInput, "unknown dimension '" + std::string(s) + "'");
}

RegionMaskSet::RegionMaskSet(std::array<Mask, kRegionCount> regions, Mask skin)
    : regions_(std::move(regions)), skin_(std::move(skin)) {
  require(!skin_.empty(), ErrorKind::EmptyRegion, "skin reference mask is empty");
  for (std::size_t i = 0; i < kRegionCount; ++i) {
    const auto name = std::string(to_string(static_cast<Region>(i)));
    require(regions_[i].width() == skin_.width() && regions_[i].height() == skin_.height(),
            ErrorKind::InvalidInput, "mask size mismatch for region " + name);
    require(!regions_[i].empty(), ErrorKind::EmptyRegion, "mask for region " + name + " is empty");
  }
}

RegionMaskSet load_mask_manifest(const std::filesystem::path& manifest) {
  const auto kv = KeyValueFile::load(manifest);
  const auto dir = manifest.parent_path();
  auto load = [&](const std::string& key) { return load_mask(dir / kv.get(key)); };
  std::array<Mask, kRegionCount> regions;
  for (std::size_t i = 0; i < kRegionCount; ++i)
    regions[i] = load(std::string(to_string(static_cast<Region>(i))));
  for (const auto& [key, _] : kv.entries()) {
    if (key == "skin") continue;
    parse_region(key);
  }
  return RegionMaskSet(std::move(regions), load("skin"));
}

void save_mask_manifest(const RegionMaskSet& masks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "masks.txt");
  require(out.good(), ErrorKind::IOError, "cannot write mask manifest in " + dir.string());
  for (std::size_t i = 0; i < kRegionCount; ++i) {
    const auto name = std::string(to_string(static_cast<Region>(i)));
    save_mask(masks.region(static_cast<Region>(i)), dir / (name + ".pgm"));
    out << name << "=" << name << ".pgm\n";
  }
  save_mask(masks.skin(), dir / "skin.pgm");
  out << "skin=skin.pgm\n";
}

double IndicatorMatrix::anomaly_at(Channel c) const {
  require(anomaly.has_value(), ErrorKind::InvalidInput, "anomaly scores not computed for " + image_id);
  return (*anomaly)[channel_index(c)];
}

namespace {

Field gray_field(const Image& img) {
  return Field::from_gray(img.channels() == 1 ? img : rgb_to_gray(img));
}

void check_mask(const Image& img, const Mask& m) {
  require(m.width() == img.width() && m.height() == img.height(), ErrorKind::InvalidInput,
          "mask/image size mismatch");
  require(!m.empty(), ErrorKind::EmptyRegion, "empty region mask");
}

double masked_mean_lightness(const Image& img, const Mask& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!m.at(x, y)) continue;
      const Lab lab = img.channels() == 3 ? srgb_to_lab(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2))
                                          : srgb_to_lab(img.at(x, y), img.at(x, y), img.at(x, y));
      sum += lab.L;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

double blur_indicator(const Image& img, const Mask& mask) {
  check_mask(img, mask);
  return masked_moments(convolve2d(gray_field(img), Kernel::laplacian4()), mask).variance;
}

double color_indicator(const Image& img, const Mask& region, const Mask& skin) {
  check_mask(img, region);
  check_mask(img, skin);
  return std::abs(masked_mean_lightness(img, region) - masked_mean_lightness(img, skin));
}

Field crop_resize_bilinear(const Field& gray, const Mask::Box& box, int out_side) {
  const int cw = box.x1 - box.x0 + 1;
  const int ch = box.y1 - box.y0 + 1;
  Field out(out_side, out_side);
  // Half-pixel-centre sampling, clamped to the crop.
  auto source = [out_side](int i, int extent, int& i0, int& i1, double& frac) {
    double s = (i + 0.5) * static_cast<double>(extent) / out_side - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, extent - 1);
    frac = s - i0;
  };
  for (int oy = 0; oy < out_side; ++oy) {
    int y0, y1;
    double fy;
    source(oy, ch, y0, y1, fy);
    for (int ox = 0; ox < out_side; ++ox) {
      int x0, x1;
      double fx;
      source(ox, cw, x0, x1, fx);
      const double top = (1 - fx) * gray.at(box.x0 + x0, box.y0 + y0) + fx * gray.at(box.x0 + x1, box.y0 + y0);
      const double bot = (1 - fx) * gray.at(box.x0 + x0, box.y0 + y1) + fx * gray.at(box.x0 + x1, box.y0 + y1);
      out.at(ox, oy) = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

void minmax_normalize(Field& patch) {
  const auto [lo, hi] = std::minmax_element(patch.values.begin(), patch.values.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : patch.values) v = range > 0.0 ? (v - min) / range : 0.5;
}

double global_ssim(const Field& a, const Field& b) {
  require(a.values.size() == b.values.size() && !a.values.empty(), ErrorKind::InvalidInput,
          "SSIM patches must have equal non-zero size");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double n = static_cast<double>(a.values.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    ma += a.values[i];
    mb += b.values[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double da = a.values[i] - ma, db = b.values[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

double structural_indicator(const Image& img, const Mask& region, const Mask& skin) {
  check_mask(img, region);
  check_mask(img, skin);
  const Field gray = gray_field(img);
  Field pr = crop_resize_bilinear(gray, region.bounding_box(), kStructurePatchSide);
  Field ps = crop_resize_bilinear(gray, skin.bounding_box(), kStructurePatchSide);
  minmax_normalize(pr);
  minmax_normalize(ps);
  return global_ssim(pr, ps);
}

int quantize_level(double gray) {
  return std::clamp(static_cast<int>(std::floor(gray * kTextureLevels)), 0, kTextureLevels - 1);
}

double texture_indicator(const Image& img, const Mask& mask) {
  check_mask(img, mask);
  const Field gray = gray_field(img);
  // (i-j)^2 summed straight from the pairs; no 64x64 matrix
  double weighted = 0.0;
  std::size_t pairs = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x + 1 < img.width(); ++x) {
      if (!mask.at(x, y) || !mask.at(x + 1, y)) continue;
      const int d = quantize_level(gray.at(x, y)) - quantize_level(gray.at(x + 1, y));
      weighted += static_cast<double>(d * d);
      ++pairs;
    }
  }
  require(pairs > 0, ErrorKind::NoAdjacentPairs, "texture region has no horizontal in-mask pairs");
  return weighted / static_cast<double>(pairs);
}

double boundary_indicator(const Image& img, const Mask& mask) {
  check_mask(img, mask);
  const Field gray = gray_field(img);
  const Field gx = convolve2d(gray, Kernel::sobel_x());
  const Field gy = convolve2d(gray, Kernel::sobel_y());
  Field mag(gray.width, gray.height);
  for (std::size_t i = 0; i < mag.values.size(); ++i)
    mag.values[i] = std::sqrt(gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i]);
  return masked_moments(mag, mask).mean;
}

IndicatorMatrix compute_indicator_matrix(const Image& img, const RegionMaskSet& masks, std::string image_id) {
  require(masks.width() == img.width() && masks.height() == img.height(), ErrorKind::InvalidInput,
          "mask set does not match image " + image_id);
  IndicatorMatrix out;
  out.image_id = std::move(image_id);
  const auto& table = channels();
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const Channel c = table[i];
    const Mask& m = masks.region(c.region);
    try {
      switch (c.dimension) {
        case Dimension::blur: out.raw[i] = blur_indicator(img, m); break;
        case Dimension::color: out.raw[i] = color_indicator(img, m, masks.skin()); break;
        case Dimension::structure: out.raw[i] = structural_indicator(img, m, masks.skin()); break;
        case Dimension::texture: out.raw[i] = texture_indicator(img, m); break;
        case Dimension::boundary: out.raw[i] = boundary_indicator(img, m); break;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "channel " + channel_name(c) + " of " + out.image_id + ": " + e.what());
    }
  }
  return out;
}

ChannelNormalizer::ChannelNormalizer(std::array<double, kChannelCount> median,
                                     std::array<double, kChannelCount> mad)
    : median_(median), mad_(mad) {
  for (double& s : mad_) s = std::max(s, kMadFloor);
}

double ChannelNormalizer::polarity(Dimension d) {
  return (d == Dimension::blur || d == Dimension::structure) ? -1.0 : 1.0;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ChannelNormalizer ChannelNormalizer::fit(const std::vector<IndicatorMatrix>& calibration) {
  require(calibration.size() >= 2, ErrorKind::InsufficientCalibration,
          "normalizer needs at least 2 calibration matrices, got " + std::to_string(calibration.size()));
  std::array<double, kChannelCount> med{}, mad{};
  std::vector<double> col(calibration.size());
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    for (std::size_t i = 0; i < calibration.size(); ++i) col[i] = calibration[i].raw[c];
    med[c] = median_of(col);
    for (double& v : col) v = std::abs(v - med[c]);
    mad[c] = median_of(col);
  }
  return ChannelNormalizer(med, mad);
}

double ChannelNormalizer::anomaly(std::size_t channel, double raw) const {
  const double pol = polarity(channels()[channel].dimension);
  return pol * (raw - median_[channel]) / mad_[channel];
}

IndicatorMatrix anomaly_scores(IndicatorMatrix mtx, const ChannelNormalizer& norm) {
  std::array<double, kChannelCount> a{};
  for (std::size_t c = 0; c < kChannelCount; ++c) a[c] = norm.anomaly(c, mtx.raw[c]);
  mtx.anomaly = a;
  return mtx;
}

void write_indicator_csv(const std::vector<IndicatorMatrix>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::IOError, "cannot write " + path.string());
  out << "image_id,region,dimension,raw,anomaly\n";
  for (const auto& m : rows) {
    require(m.image_id.find(',') == std::string::npos, ErrorKind::InvalidInput,
            "image id must not contain ',': " + m.image_id);
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      const Channel ch = channels()[c];
      out << m.image_id << ',' << to_string(ch.region) << ',' << to_string(ch.dimension) << ','
          << format_fixed6(m.raw[c]) << ',' << (m.anomaly ? format_fixed6((*m.anomaly)[c]) : "nan") << '\n';
    }
  }
  require(out.good(), ErrorKind::IOError, "write failed: " + path.string());
}

std::vector<IndicatorMatrix> read_indicator_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IOError, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "image_id,region,dimension,raw,anomaly", ErrorKind::FormatError,
          "unexpected indicator CSV header in " + path.string());
  std::vector<IndicatorMatrix> out;
  std::map<std::string, std::size_t> by_id;
  std::map<std::string, std::array<bool, kChannelCount>> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 5, ErrorKind::FormatError, "malformed indicator row: " + line);
    const std::size_t c = channel_index({parse_region(f[1]), parse_dimension(f[2])});
    auto [it, inserted] = by_id.try_emplace(f[0], out.size());
    if (inserted) {
      out.push_back({});
      out.back().image_id = f[0];
      seen[f[0]].fill(false);
    }
    auto& m = out[it->second];
    m.raw[c] = std::stod(f[3]);
    if (f[4] != "nan") {
      if (!m.anomaly) m.anomaly.emplace().fill(std::numeric_limits<double>::quiet_NaN());
      (*m.anomaly)[c] = std::stod(f[4]);
    }
    seen[f[0]][c] = true;
  }
  for (const auto& [id, flags] : seen)
    require(std::all_of(flags.begin(), flags.end(), [](bool b) { return b; }), ErrorKind::FormatError,
            "indicator CSV is missing channels for " + id);
  return out;
}

}  // namespace aifind
