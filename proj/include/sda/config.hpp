#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sda/error.hpp"

namespace sda {

// Flat TOML-style config: `key = value` lines, '#' comments, values are numbers, booleans,
// "quoted strings" or [comma, separated, lists] of numbers.

enum class ValueKind { integer, real, boolean, string, real_list };

struct ConfigKey {
  std::string name;
  ValueKind kind;
  std::string default_value;  // literal in config syntax
  std::string help;
};

using ConfigSchema = std::vector<ConfigKey>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    if (line[k] == '"') quoted = !quoted;
    if (line[k] == '#' && !quoted) return line.substr(0, k);
  }
  return line;
}

inline long long literal_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
}

inline double literal_real(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
}

inline bool literal_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::string literal_string(const std::string& v, const std::string& key) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (v.find_first_of("\"=[]") != std::string::npos)
    throw ConfigError("key '" + key + "' expects a string, got '" + v + "'");
  return v;  // bare words are accepted
}

inline std::vector<double> literal_list(const std::string& v, const std::string& key) {
  std::string body = v;
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::vector<double> out;
  std::istringstream is(body);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(literal_real(item, key));
  }
  return out;
}
}  // namespace detail

class RunConfig {
 public:
  explicit RunConfig(ConfigSchema schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) {
      check(k, k.default_value);
      values_[k.name] = k.default_value;
    }
  }

  const ConfigSchema& schema() const noexcept { return schema_; }

  bool has_key(const std::string& key) const {
    return std::any_of(schema_.begin(), schema_.end(), [&](const ConfigKey& k) { return k.name == key; });
  }

  /// Sets one key from a literal; unknown keys and ill-typed values throw ConfigError.
  void set(const std::string& key, const std::string& literal) {
    const ConfigKey& k = find(key);
    std::string v = detail::trim(literal);
    if (k.kind == ValueKind::string && !(v.size() >= 2 && v.front() == '"')) v = quote(v);
    if (k.kind == ValueKind::real_list && (v.empty() || v.front() != '[')) v = "[" + v + "]";
    check(k, v);
    values_[key] = v;
    explicit_.insert(key);
  }

  /// Sets a key only when nothing explicit (file, flag, env) has set it; used for presets.
  void set_fallback(const std::string& key, const std::string& literal) {
    if (explicitly_set(key)) return;
    set(key, literal);
    explicit_.erase(key);
  }

  bool explicitly_set(const std::string& key) const { return explicit_.count(key) != 0; }

  void load(std::istream& is, const std::string& origin = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string body = detail::trim(detail::strip_comment(line));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = detail::trim(body.substr(0, eq));
      try {
        set(key, body.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file '" + path.string() + "'");
    load(is, path.string());
  }

  /// SDA_SEED, when set, replaces the `seed` key.
  void apply_env() {
    if (const char* s = std::getenv("SDA_SEED"); s && *s && has_key("seed")) {
      try {
        set("seed", s);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("SDA_SEED: ") + e.what());
      }
    }
  }

  long long get_int(const std::string& key) const { return detail::literal_int(raw(key), key); }
  std::size_t get_size(const std::string& key) const {
    const long long v = get_int(key);
    if (v < 0) throw ConfigError("key '" + key + "' must be >= 0");
    return static_cast<std::size_t>(v);
  }
  std::uint64_t get_u64(const std::string& key) const {
    const std::string& v = raw(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v.front() != '-') {
        const unsigned long long x = std::stoull(v, &used);
        if (used == v.size()) return x;
      }
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  double get_real(const std::string& key) const { return detail::literal_real(raw(key), key); }
  bool get_bool(const std::string& key) const { return detail::literal_bool(raw(key), key); }
  std::string get_string(const std::string& key) const { return detail::literal_string(raw(key), key); }
  std::vector<double> get_list(const std::string& key) const { return detail::literal_list(raw(key), key); }

  /// Resolved config in the same syntax; reloading it reproduces every value.
  void write(std::ostream& os) const {
    for (const auto& k : schema_) {
      if (!k.help.empty()) os << "# " << k.help << '\n';
      os << k.name << " = " << values_.at(k.name) << '\n';
    }
  }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write resolved config '" + path.string() + "'");
    write(os);
  }

 private:
  static std::string quote(const std::string& s) { return "\"" + s + "\""; }

  const ConfigKey& find(const std::string& key) const {
    for (const auto& k : schema_)
      if (k.name == key) return k;
    throw ConfigError("unknown config key '" + key + "'");
  }

  const std::string& raw(const std::string& key) const {
    find(key);
    return values_.at(key);
  }

  static void check(const ConfigKey& k, const std::string& v) {
    switch (k.kind) {
      case ValueKind::integer: detail::literal_int(v, k.name); break;
      case ValueKind::real: detail::literal_real(v, k.name); break;
      case ValueKind::boolean: detail::literal_bool(v, k.name); break;
      case ValueKind::string: detail::literal_string(v, k.name); break;
      case ValueKind::real_list: detail::literal_list(v, k.name); break;
    }
  }

  ConfigSchema schema_;
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace sda
