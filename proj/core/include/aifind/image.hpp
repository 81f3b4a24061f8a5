#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace aifind {

/// Row-major raster with 1 (gray) or 3 (RGB) interleaved channels, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels);  // zero-filled
  static Image from_data(int width, int height, int channels, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  void set(int x, int y, int c, double v);  // clamps into [0,1]

  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Unclamped single-channel floating field (convolution output, gray planes).
struct Field {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Field() = default;
  Field(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  static Field from_gray(const Image& gray);
};

class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  /// Sets every pixel in the half-open rectangle [x0,x1) x [y0,y1), clipped to the mask.
  void fill_rect(int x0, int y0, int x1, int y1, bool v = true);

  std::size_t count() const;
  bool empty() const { return count() == 0; }

  struct Box {
    int x0, y0, x1, y1;  // inclusive
  };
  /// Tight bounding box of the set pixels; EmptyRegion when none are set.
  Box bounding_box() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

class Kernel {
 public:
  Kernel(int side, std::vector<double> weights);

  int side() const { return side_; }
  double at(int dx, int dy) const { return weights_[static_cast<std::size_t>(dy) * side_ + dx]; }

  static Kernel identity3();
  static Kernel laplacian4();  // [[0,1,0],[1,-4,1],[0,1,0]]
  static Kernel sobel_x();
  static Kernel sobel_y();

 private:
  int side_;
  std::vector<double> weights_;
};

struct Lab {
  double L, a, b;
};

struct Moments {
  double mean;
  double variance;  // population (divide by count)
};

Image rgb_to_gray(const Image& rgb);
std::vector<Lab> rgb_to_lab(const Image& rgb);
Lab srgb_to_lab(double r, double g, double b);

/// Correlation with replicate (clamp-to-edge) border.
Field convolve2d(const Field& input, const Kernel& kernel);
Field convolve2d(const Image& gray, const Kernel& kernel);

Moments masked_moments(const Field& field, const Mask& mask);

// Binary netpbm I/O: P5 (gray) and P6 (RGB), maxval 255 only.
Image load_pnm(const std::filesystem::path& path);
void save_pnm(const Image& img, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);  // PGM, nonzero -> true
void save_mask(const Mask& mask, const std::filesystem::path& path);

}  // namespace aifind
