#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "asyncov/errors.hpp"

namespace asyncov {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) {
    auto t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

// Plain key = value configuration file. Keys may repeat ("modality <name>"
// appears once per modality); '#' starts a comment.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse_text(const std::string& text, const std::string& origin = "<string>") {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
      kv.entries_.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
  }

  bool has(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == key; });
  }

  std::string get(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    throw UsageError(origin_ + ": missing required key '" + key + "'");
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    return fallback;
  }

  double get_double(const std::string& key) const { return to_double(key, get(key)); }
  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long get_int(const std::string& key) const { return to_int(key, get(key)); }
  long get_int_or(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    auto v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw UsageError(origin_ + ": key '" + key + "' is not a boolean: " + v);
  }

  std::vector<std::string> get_list_or(const std::string& key) const {
    return has(key) ? split_list(get(key)) : std::vector<std::string>{};
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split_list(get(key))) out.push_back(to_double(key, tok));
    return out;
  }

  // All (suffix, value) pairs for keys of the form "<prefix> <suffix>".
  std::vector<std::pair<std::string, std::string>> prefixed(const std::string& prefix) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : entries_) {
      if (e.first.size() > prefix.size() + 1 && e.first.compare(0, prefix.size(), prefix) == 0 &&
          std::isspace(static_cast<unsigned char>(e.first[prefix.size()]))) {
        out.emplace_back(trim(e.first.substr(prefix.size())), e.second);
      }
    }
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (trim(v.substr(used)).empty()) return x;
    } catch (const std::exception&) {
    }
    throw UsageError(origin_ + ": key '" + key + "' is not numeric: " + v);
  }

  long to_int(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      long x = std::stol(v, &used);
      if (trim(v.substr(used)).empty()) return x;
    } catch (const std::exception&) {
    }
    throw UsageError(origin_ + ": key '" + key + "' is not an integer: " + v);
  }

  std::string origin_ = "<none>";
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace asyncov
