#pragma once

// Flat key-value configuration with [section] headers. Keys are addressed as
// "section.key". Parsing keeps insertion order for snapshots; consumers
// declare the keys they understand and anything else is rejected.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctbound/common.hpp"

namespace ctbound {

class Config {
 public:
  static Config parse_stream(std::istream& is, const std::string& origin = "<stream>") {
    Config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto where = origin + ":" + std::to_string(lineno);
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3)
          throw ConfigError("config " + where + ": malformed section header");
        section = strip(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError("config " + where + ": empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config " + where + ": expected key = value");
      std::string key = strip(s.substr(0, eq)), value = strip(s.substr(eq + 1));
      if (key.empty()) throw ConfigError("config " + where + ": empty key");
      if (section.empty())
        throw ConfigError("config " + where + ": key outside any [section]");
      c.set(section + "." + key, value);
    }
    return c;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("config: cannot read " + path);
    return parse_stream(is, path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + it->second);
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (...) {
      throw ConfigError("config: key '" + key + "' is not a seed: " + it->second);
    }
  }

  // Rejects any key outside the declared vocabulary.
  void reject_unknown(const std::set<std::string>& known) const {
    for (const auto& k : order_)
      if (!known.count(k)) throw ConfigError("config: unknown key '" + k + "'");
  }

  // Snapshot in parseable form, grouped by section in first-seen order.
  void write(std::ostream& os) const {
    std::string current;
    for (const auto& k : order_) {
      const auto dot = k.find('.');
      const std::string section = k.substr(0, dot), name = k.substr(dot + 1);
      if (section != current) {
        os << "[" << section << "]\n";
        current = section;
      }
      os << name << " = " << values_.at(k) << "\n";
    }
  }

  const std::vector<std::string>& keys() const { return order_; }

 private:
  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace ctbound
