#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace aifind {

/// Flat `key=value` text file. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return entries_.contains(key); }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Sorted `key=value\n` lines; stable across runs, used for config hashes.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
};

std::string format_fixed6(double v);

}  // namespace aifind
