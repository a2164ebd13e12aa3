#pragma once

// UTF-8 `key=value` files: one pair per line, blank lines and lines starting
// with '#' ignored, whitespace around keys and values trimmed.

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace steadyop {

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in);
  static KeyValues load(const std::filesystem::path& path);

  /// Appends or overwrites; insertion order is kept for writing.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return index_.count(key) != 0; }

  /// Throws FormatError for a missing key or a value that does not parse.
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace steadyop
