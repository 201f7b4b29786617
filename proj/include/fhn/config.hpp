#pragma once

// Flat `key = value` configuration with per-command schemas, command-line overrides,
// a stable hash of the resolved values and a provenance file.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fhn::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct KeySpec {
  std::string key;
  std::optional<std::string> fallback;  ///< nullopt: required
  std::string help;
};
using Schema = std::vector<KeySpec>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys are an error.
inline std::map<std::string, std::string> parse_text(const std::string& text, const std::string& origin = "config") {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  for (int no = 1; std::getline(is, line); ++no) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second)
      throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
  }
  return out;
}

inline std::map<std::string, std::string> parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str(), path);
}

/// Numbers accept plain decimals and fractions such as 1/1024.
inline double parse_double(const std::string& key, const std::string& raw) {
  auto one = [&](const std::string& s) {
    double v = 0.0;
    const auto t = trim(s);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
      throw ConfigError("key '" + key + "': '" + raw + "' is not a number");
    return v;
  };
  if (const auto slash = raw.find('/'); slash != std::string::npos)
    return one(raw.substr(0, slash)) / one(raw.substr(slash + 1));
  return one(raw);
}

inline long parse_long(const std::string& key, const std::string& raw) {
  long v = 0;
  const auto t = trim(raw);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError("key '" + key + "': '" + raw + "' is not an integer");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const auto t = trim(raw);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("key '" + key + "': '" + raw + "' is not a boolean");
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Values after defaults, file and overrides have been merged.
class Resolved {
 public:
  Resolved() = default;
  explicit Resolved(std::map<std::string, std::string> v) : values_(std::move(v)) {}

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }
  double num(const std::string& key) const { return parse_double(key, str(key)); }
  long integer(const std::string& key) const { return parse_long(key, str(key)); }
  bool flag(const std::string& key) const { return parse_bool(key, str(key)); }
  std::vector<double> nums(const std::string& key) const {
    std::vector<double> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ','))
      if (!trim(item).empty()) out.push_back(parse_double(key, item));
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key = value` lines; the provenance file body.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }
  /// FNV-1a of the canonical text without the execution-only keys out_dir and workers.
  std::string hash() const {
    std::string text;
    for (const auto& [k, v] : values_)
      if (k != "out_dir" && k != "workers") text += k + " = " + v + "\n";
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(text);
    return os.str();
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Merges schema defaults, the file and the overrides. Unknown keys and missing required keys throw.
inline Resolved resolve(const Schema& schema, const std::map<std::string, std::string>& file,
                        const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> out;
  auto known = [&](const std::string& k) {
    for (const auto& s : schema)
      if (s.key == k) return true;
    return false;
  };
  for (const auto& [k, v] : file)
    if (!known(k)) throw ConfigError("unknown config key '" + k + "'");
  for (const auto& [k, v] : overrides)
    if (!known(k)) throw ConfigError("unknown config key '" + k + "'");
  for (const auto& s : schema) {
    if (auto it = overrides.find(s.key); it != overrides.end())
      out[s.key] = it->second;
    else if (auto jt = file.find(s.key); jt != file.end())
      out[s.key] = jt->second;
    else if (s.fallback)
      out[s.key] = *s.fallback;
    else
      throw ConfigError("missing required config key '" + s.key + "'");
  }
  return Resolved(std::move(out));
}

/// Writes the resolved configuration in the input format, so it can be fed back with --config.
inline void write_provenance(const std::string& path, const std::string& command, const Resolved& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "# resolved configuration, command " << command << ", config_hash " << r.hash() << "\n" << r.canonical();
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace fhn::config
