#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "doc/errors.hpp"

namespace doc {

// Command-scoped key=value configuration. Keys are case-sensitive and dashes
// are folded to underscores, so `learning-rate` and `learning_rate` name the
// same field. Later layers override earlier ones: defaults, then the config
// file, then command-line flags.
class RunConfig {
 public:
  // One `key = value` per line; blank lines and lines starting with '#' are
  // ignored. A repeated key keeps its last value.
  static RunConfig parse(std::string_view text, const std::string& origin = "config") {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      const auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw ValueError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      }
      const auto key = trim(body.substr(0, eq));
      if (key.empty()) throw ValueError(origin + ":" + std::to_string(line_no) + ": empty key");
      cfg.set(std::string(key), std::string(trim(body.substr(eq + 1))));
    }
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str(), path);
  }

  void set(const std::string& key, std::string value) { values_[normalize(key)] = std::move(value); }

  void set_default(const std::string& key, std::string value) { values_.try_emplace(normalize(key), std::move(value)); }

  void merge(const RunConfig& overrides) {
    for (const auto& [k, v] : overrides.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.contains(normalize(key)); }

  // A present but empty value counts as unset for required string fields.
  std::string text(const std::string& key) const {
    const auto it = values_.find(normalize(key));
    if (it == values_.end() || it->second.empty()) throw ValueError("missing required field '" + normalize(key) + "'");
    return it->second;
  }

  std::string text_or(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(normalize(key));
    return it == values_.end() ? fallback : it->second;
  }

  double real(const std::string& key) const {
    const auto raw = text(key);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || end != raw.data() + raw.size()) bad(key, raw, "a number");
    return v;
  }

  std::uint64_t u64(const std::string& key) const {
    const auto raw = text(key);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || end != raw.data() + raw.size()) bad(key, raw, "a non-negative integer");
    return v;
  }

  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const auto raw = text(key);
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    bad(key, raw, "a boolean");
  }

  // Value must be one of `allowed`; returns its position in the list.
  std::size_t choice(const std::string& key, const std::vector<std::string>& allowed) const {
    const auto raw = text(key);
    for (std::size_t i = 0; i < allowed.size(); ++i) {
      if (allowed[i] == raw) return i;
    }
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : "|") + a;
    bad(key, raw, "one of " + list);
  }

  // Comma-separated list, blanks dropped; empty or unset gives an empty list.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(text_or(key, ""));
    for (std::string item; std::getline(in, item, ',');) {
      const auto t = trim(item);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }

  // Sorted key=value lines; parse(echo()) reproduces this configuration.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string normalize(std::string key) {
    for (auto& c : key) {
      if (c == '-') c = '_';
    }
    return key;
  }

  static std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& raw, const std::string& expected) {
    throw ValueError("field '" + normalize(key) + "' must be " + expected + ", got '" + raw + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace doc
