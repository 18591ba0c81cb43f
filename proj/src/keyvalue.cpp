#include "fo3d/keyvalue.hpp"

#include <fstream>
#include <sstream>

#include "fo3d/errors.hpp"

namespace fo3d {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

namespace {

double parse_number(const std::string& token) {
  const auto slash = token.find('/');
  std::size_t used = 0;
  if (slash != std::string::npos) {
    const double num = std::stod(token.substr(0, slash), &used);
    if (used != slash) throw std::invalid_argument(token);
    const std::string den_text = token.substr(slash + 1);
    const double den = std::stod(den_text, &used);
    if (used != den_text.size() || den == 0.0) throw std::invalid_argument(token);
    return num / den;
  }
  const double v = std::stod(token, &used);
  if (used != token.size()) throw std::invalid_argument(token);
  return v;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text) {
  std::string normalized = text;
  for (char& c : normalized) {
    if (c == ',' || c == '[' || c == ']') c = ' ';
  }
  std::istringstream is(normalized);
  std::vector<double> out;
  std::string token;
  while (is >> token) out.push_back(parse_number(token));
  return out;
}

KeyValueFile KeyValueFile::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.values_[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::optional<std::string> KeyValueFile::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueFile::get_string(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw ConfigError(origin_ + ": missing key '" + key + "'");
  return *v;
}

int KeyValueFile::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
  }
}

double KeyValueFile::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    const auto list = parse_number_list(v);
    if (list.size() != 1) throw std::invalid_argument(v);
    return list.front();
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
  }
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    return parse_number_list(v);
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number list: '" + v + "'");
  }
}

}  // namespace fo3d
