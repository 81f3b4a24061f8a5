#include "aifind/kv_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aifind/error.hpp"

namespace aifind {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorKind::FormatError,
            origin + ":" + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(t.substr(0, eq));
    require(!key.empty(), ErrorKind::FormatError,
            origin + ":" + std::to_string(lineno) + ": empty key");
    require(!kv.entries_.contains(key), ErrorKind::FormatError,
            origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.entries_[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IOError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& KeyValueFile::get(const std::string& key) const {
  const auto it = entries_.find(key);
  require(it != entries_.end(), ErrorKind::InvalidInput, origin_ + ": missing key '" + key + "'");
  return it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::FormatError, origin_ + ": '" + key + "' is not a number: " + v);
}

long long KeyValueFile::get_int(const std::string& key) const {
  const auto& v = get(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), ErrorKind::FormatError,
          origin_ + ": '" + key + "' is not an integer: " + v);
  return out;
}

std::string KeyValueFile::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace aifind
