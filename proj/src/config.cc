// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tsasr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

KeyValueConfig KeyValueConfig::parse(const std::string& text,
                                     const std::string& origin) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}
void KeyValueConfig::set(const std::string& key, long long value) {
  kv_[key] = std::to_string(value);
}
void KeyValueConfig::set(const std::string& key, double value) {
  kv_[key] = format_double(value);
}
void KeyValueConfig::set(const std::string& key, bool value) {
  kv_[key] = value ? "true" : "false";
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

long long KeyValueConfig::get_int(const std::string& key) const {
  const std::string s = get_string(key);
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  return v;
}

long long KeyValueConfig::get_int(const std::string& key,
                                  long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string s = get_string(key);
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
  return v;
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string s = get_string(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + s + "'");
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

void KeyValueConfig::check_keys(const std::vector<std::string>& allowed,
                                const std::string& what) const {
  for (const auto& [k, v] : kv_)
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError(what + ": unknown key '" + k + "'");
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
  return out;
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << to_string();
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace tsasr
