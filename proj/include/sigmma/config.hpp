#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sigmma/rng.hpp"

namespace sigmma {

// Flat key=value configuration. Lines starting with '#' and blank lines are
// ignored; values keep everything after the first '='. Canonical form (sorted
// keys) backs the config hash stored in checkpoints.
class KvConfig {
 public:
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set_u64(const std::string& key, std::uint64_t v) { kv_[key] = std::to_string(v); }
  void set_double(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    kv_[key] = buf;
  }
  void set_bool(const std::string& key, bool v) { kv_[key] = v ? "true" : "false"; }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end())
      throw std::invalid_argument("config: missing key '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::uint64_t get_u64(const std::string& key) const {
    return std::stoull(get(key));
  }
  double get_double(const std::string& key) const { return std::stod(get(key)); }
  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' is not a boolean: " + v);
  }

  // overriding entries win
  void merge(const KvConfig& overrides) {
    for (const auto& [k, v] : overrides.kv_) kv_[k] = v;
  }

  std::string canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << '=' << v << '\n';
    return os.str();
  }

  std::uint64_t hash() const {
    const std::string c = canonical();
    return fnv1a64(c.data(), c.size());
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot write " + path);
    f << canonical();
  }

  static KvConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot read " + path);
    KvConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::size_t start = line.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      if (line[start] == '#') continue;
      const std::size_t eq = line.find('=', start);
      if (eq == std::string::npos)
        throw std::runtime_error("config: " + path + ":" +
                                 std::to_string(line_no) + ": expected key=value");
      std::string key = line.substr(start, eq - start);
      while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
      std::string value = line.substr(eq + 1);
      std::size_t vs = value.find_first_not_of(" \t");
      value = vs == std::string::npos ? "" : value.substr(vs);
      cfg.set(key, value);
    }
    return cfg;
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace sigmma
