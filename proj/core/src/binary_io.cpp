#include "aifind/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "aifind/error.hpp"

namespace aifind {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::EmptyRegion: return "EmptyRegion";
    case ErrorKind::NoAdjacentPairs: return "NoAdjacentPairs";
    case ErrorKind::InsufficientCalibration: return "InsufficientCalibration";
    case ErrorKind::IncompleteLibrary: return "IncompleteLibrary";
    case ErrorKind::DegenerateFeature: return "DegenerateFeature";
    case ErrorKind::TraceMismatch: return "TraceMismatch";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::NoHistory: return "NoHistory";
    case ErrorKind::DegenerateReference: return "DegenerateReference";
    case ErrorKind::UndefinedGeodesic: return "UndefinedGeodesic";
    case ErrorKind::UndefinedMetric: return "UndefinedMetric";
    case ErrorKind::IOError: return "IOError";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

namespace io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  require(out_.good(), ErrorKind::IOError, "cannot open for writing: " + path.string());
}

void BinaryWriter::magic(std::string_view four_cc) {
  require(four_cc.size() == 4, ErrorKind::InvalidInput, "magic must be 4 bytes");
  out_.write(four_cc.data(), 4);
}

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::f64s(std::span<const double> values) {
  out_.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
}

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::close() {
  out_.flush();
  require(out_.good(), ErrorKind::IOError, "write failed: " + path_.string());
  out_.close();
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  require(in_.good(), ErrorKind::IOError, "cannot open for reading: " + path.string());
}

void BinaryReader::read_raw(void* dst, std::size_t n) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in_.gcount()) == n, ErrorKind::FormatError,
          "unexpected end of file: " + path_.string());
}

void BinaryReader::expect_magic(std::string_view four_cc) {
  char buf[4];
  read_raw(buf, 4);
  require(std::string_view(buf, 4) == four_cc, ErrorKind::FormatError,
          "bad magic in " + path_.string() + " (expected " + std::string(four_cc) + ")");
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  read_raw(&v, 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  read_raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  read_raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  read_raw(&v, sizeof v);
  return v;
}

std::vector<double> BinaryReader::f64s(std::size_t count) {
  std::vector<double> v(count);
  if (count > 0) read_raw(v.data(), count * sizeof(double));
  return v;
}

std::string BinaryReader::str() {
  const auto n = u32();
  require(n < (1u << 20), ErrorKind::FormatError, "implausible string length in " + path_.string());
  std::string s(n, '\0');
  if (n > 0) read_raw(s.data(), n);
  return s;
}

bool BinaryReader::at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    h ^= std::bit_cast<std::uint64_t>(v);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace io
}  // namespace aifind
