// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Plain "key = value" configuration documents. Lines starting with '#' are
// comments. Keys are kept sorted so that a written config is canonical.

#ifndef TSASR_CONFIG_H_
#define TSASR_CONFIG_H_

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsasr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text,
                              const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) {
    set(key, std::string(value));
  }
  void set(const std::string& key, long long value);
  void set(const std::string& key, int value) {
    set(key, static_cast<long long>(value));
  }
  void set(const std::string& key, std::size_t value) {
    set(key, static_cast<long long>(value));
  }
  void set(const std::string& key, double value);
  void set(const std::string& key, bool value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Overlays every entry of other onto this config.
  void merge(const KeyValueConfig& other);
  // Keys not present in allowed raise ConfigError (catches typos).
  void check_keys(const std::vector<std::string>& allowed,
                  const std::string& what) const;

  std::string to_string() const;
  void save(const std::string& path) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Shortest decimal text that parses back to exactly v.
std::string format_double(double v);

}  // namespace tsasr

#endif  // TSASR_CONFIG_H_
