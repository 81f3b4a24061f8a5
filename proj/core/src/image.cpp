#include "aifind/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "aifind/error.hpp"

namespace aifind {

Image::Image(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels) {
  require(width >= 1 && height >= 1, ErrorKind::InvalidInput, "image dimensions must be >= 1");
  require(channels == 1 || channels == 3, ErrorKind::InvalidInput, "image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(width) * height * channels, 0.0);
}

Image Image::from_data(int width, int height, int channels, std::vector<double> data) {
  Image img(width, height, channels);
  require(data.size() == img.data_.size(), ErrorKind::InvalidInput, "image data length mismatch");
  for (double v : data) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidInput, "image value outside [0,1]");
  }
  img.data_ = std::move(data);
  return img;
}

void Image::set(int x, int y, int c, double v) { data_[index(x, y, c)] = std::clamp(v, 0.0, 1.0); }

Field Field::from_gray(const Image& gray) {
  require(gray.channels() == 1, ErrorKind::InvalidInput, "expected a 1-channel image");
  Field f;
  f.width = gray.width();
  f.height = gray.height();
  f.values = gray.data();
  return f;
}

Mask::Mask(int width, int height, bool fill) : width_(width), height_(height) {
  require(width >= 1 && height >= 1, ErrorKind::InvalidInput, "mask dimensions must be >= 1");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

void Mask::fill_rect(int x0, int y0, int x1, int y1, bool v) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, width_);
  y1 = std::min(y1, height_);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) set(x, y, v);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Mask::Box Mask::bounding_box() const {
  Box box{width_, height_, -1, -1};
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (!at(x, y)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  require(box.x1 >= 0, ErrorKind::EmptyRegion, "mask has no set pixels");
  return box;
}

Kernel::Kernel(int side, std::vector<double> weights) : side_(side), weights_(std::move(weights)) {
  require(side >= 1 && side % 2 == 1, ErrorKind::InvalidInput, "kernel side must be odd and >= 1");
  require(weights_.size() == static_cast<std::size_t>(side) * side, ErrorKind::InvalidInput,
          "kernel weight count must be side*side");
}

Kernel Kernel::identity3() { return Kernel(3, {0, 0, 0, 0, 1, 0, 0, 0, 0}); }
Kernel Kernel::laplacian4() { return Kernel(3, {0, 1, 0, 1, -4, 1, 0, 1, 0}); }
Kernel Kernel::sobel_x() { return Kernel(3, {-1, 0, 1, -2, 0, 2, -1, 0, 1}); }
Kernel Kernel::sobel_y() { return Kernel(3, {-1, -2, -1, 0, 0, 0, 1, 2, 1}); }

Image rgb_to_gray(const Image& rgb) {
  require(rgb.channels() == 3, ErrorKind::InvalidInput, "rgb_to_gray expects 3 channels");
  Image gray(rgb.width(), rgb.height(), 1);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      gray.set(x, y, 0, 0.299 * rgb.at(x, y, 0) + 0.587 * rgb.at(x, y, 1) + 0.114 * rgb.at(x, y, 2));
    }
  }
  return gray;
}

namespace {

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

// linear sRGB -> XYZ (D65). The reference white is the image of (1,1,1) so
// that sRGB white maps to exactly L=100, a=b=0.
constexpr double kM[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
constexpr double kWhite[3] = {
    kM[0][0] + kM[0][1] + kM[0][2],
    kM[1][0] + kM[1][1] + kM[1][2],
    kM[2][0] + kM[2][1] + kM[2][2],
};

}  // namespace

Lab srgb_to_lab(double r, double g, double b) {
  const double lin[3] = {srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)};
  double xyz[3];
  for (int i = 0; i < 3; ++i) xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::vector<Lab> rgb_to_lab(const Image& rgb) {
  require(rgb.channels() == 3, ErrorKind::InvalidInput, "rgb_to_lab expects 3 channels");
  std::vector<Lab> out;
  out.reserve(rgb.pixel_count());
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x)
      out.push_back(srgb_to_lab(rgb.at(x, y, 0), rgb.at(x, y, 1), rgb.at(x, y, 2)));
  return out;
}

Field convolve2d(const Field& input, const Kernel& kernel) {
  Field out(input.width, input.height);
  const int c = kernel.side() / 2;
  double ksum = 0.0;
  for (int dy = 0; dy < kernel.side(); ++dy)
    for (int dx = 0; dx < kernel.side(); ++dx) ksum += kernel.at(dx, dy);
  // taps act on differences from the centre pixel
  for (int y = 0; y < input.height; ++y) {
    for (int x = 0; x < input.width; ++x) {
      const double centre = input.at(x, y);
      double acc = 0.0;
      for (int dy = 0; dy < kernel.side(); ++dy) {
        const int sy = std::clamp(y + dy - c, 0, input.height - 1);
        for (int dx = 0; dx < kernel.side(); ++dx) {
          const int sx = std::clamp(x + dx - c, 0, input.width - 1);
          acc += kernel.at(dx, dy) * (input.at(sx, sy) - centre);
        }
      }
      out.at(x, y) = ksum == 0.0 ? acc : acc + ksum * centre;
    }
  }
  return out;
}

Field convolve2d(const Image& gray, const Kernel& kernel) {
  return convolve2d(Field::from_gray(gray), kernel);
}

Moments masked_moments(const Field& field, const Mask& mask) {
  require(field.width == mask.width() && field.height == mask.height(), ErrorKind::InvalidInput,
          "field/mask shape mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x)
      if (mask.at(x, y)) {
        sum += field.at(x, y);
        ++n;
      }
  require(n > 0, ErrorKind::EmptyRegion, "masked_moments over an empty mask");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x)
      if (mask.at(x, y)) {
        const double d = field.at(x, y) - mean;
        ss += d * d;
      }
  return {mean, ss / static_cast<double>(n)};
}

namespace {

struct PnmHeader {
  char kind;
  int width, height, maxval;
};

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  // Skip whitespace and '#' comments between header tokens.
  for (;;) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  require(in.good() && v >= 0, ErrorKind::FormatError, "malformed netpbm header: " + path.string());
  return v;
}

PnmHeader read_pnm_header(std::istream& in, const std::filesystem::path& path) {
  char p = 0, k = 0;
  in.get(p);
  in.get(k);
  require(p == 'P' && (k == '5' || k == '6'), ErrorKind::FormatError,
          "not a binary PGM/PPM: " + path.string());
  PnmHeader h{k, 0, 0, 0};
  h.width = read_header_int(in, path);
  h.height = read_header_int(in, path);
  h.maxval = read_header_int(in, path);
  require(h.maxval == 255, ErrorKind::FormatError, "only maxval 255 is supported: " + path.string());
  require(h.width >= 1 && h.height >= 1, ErrorKind::FormatError, "empty image: " + path.string());
  in.get();  // single whitespace byte before the raster
  return h;
}

std::vector<unsigned char> read_raster(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n, ErrorKind::FormatError,
          "truncated raster: " + path.string());
  return buf;
}

}  // namespace

Image load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IOError, "cannot read " + path.string());
  const auto h = read_pnm_header(in, path);
  const int channels = h.kind == '6' ? 3 : 1;
  const auto raw = read_raster(in, static_cast<std::size_t>(h.width) * h.height * channels, path);
  std::vector<double> data(raw.size());
  std::transform(raw.begin(), raw.end(), data.begin(), [](unsigned char v) { return v / 255.0; });
  return Image::from_data(h.width, h.height, channels, std::move(data));
}

void save_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::IOError, "cannot write " + path.string());
  out << (img.channels() == 3 ? "P6" : "P5") << "\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> raw(img.data().size());
  std::transform(img.data().begin(), img.data().end(), raw.begin(),
                 [](double v) { return static_cast<unsigned char>(std::lround(v * 255.0)); });
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(out.good(), ErrorKind::IOError, "write failed: " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IOError, "cannot read " + path.string());
  const auto h = read_pnm_header(in, path);
  require(h.kind == '5', ErrorKind::FormatError, "mask must be a PGM (P5): " + path.string());
  const auto raw = read_raster(in, static_cast<std::size_t>(h.width) * h.height, path);
  Mask m(h.width, h.height);
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) m.set(x, y, raw[static_cast<std::size_t>(y) * h.width + x] != 0);
  return m;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  Image img(mask.width(), mask.height(), 1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) img.set(x, y, 0, mask.at(x, y) ? 1.0 : 0.0);
  save_pnm(img, path);
}

}  // namespace aifind
