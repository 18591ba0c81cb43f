#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fo3d {

/// "key = value" text file. Blank lines and lines starting with '#' are ignored;
/// later keys override earlier ones.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  /// Throws ConfigError if the file is missing or a line has no '='.
  static KeyValueFile read(const std::filesystem::path& path);
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  /// Typed accessors; throw ConfigError naming the key when missing or unparsable.
  std::string get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string origin() const { return origin_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

std::string trim(const std::string& s);

/// Parses "1, 1/2, 0.25" style lists: comma or whitespace separated, fractions allowed.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace fo3d
