#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aifind::io {

// Little-endian primitive writer/reader used by every binary artifact format
// (library sidecar, encoder checkpoint, head archive).

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(std::string_view s);  // u32 length + bytes

  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  /// Throws FormatError when the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::string str();

  bool at_end();

 private:
  void read_raw(void* dst, std::size_t n);

  std::filesystem::path path_;
  std::ifstream in_;
};

/// FNV-1a 64-bit hash; used for config hashes and parameter fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed = 14695981039346656037ull);

std::string hex64(std::uint64_t v);

}  // namespace aifind::io
