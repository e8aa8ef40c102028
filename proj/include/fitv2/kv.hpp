// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Flat `key = value` text with dotted keys and `#` comments.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fitv2/errors.hpp"

namespace fitv2 {

struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// `source` names the text in error messages. Duplicate keys are an error.
inline std::vector<KvEntry> parse_kv(std::string_view text, const std::string& source) {
  std::vector<KvEntry> out;
  std::map<std::string, int> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(it->second) + ")");
    }
    out.push_back({std::move(key), std::move(value), line_no});
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline double parse_double(std::string_view s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + std::string(s) + "' is not a finite number");
  }
}

inline long long parse_int(std::string_view s, const std::string& what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError(what + ": '" + std::string(s) + "' is not an integer");
  }
  return v;
}

inline bool parse_bool(std::string_view s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(what + ": '" + std::string(s) + "' is not a boolean");
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace fitv2
