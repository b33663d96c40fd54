// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#ifndef SKIPSTEP_BUILD_ID
#define SKIPSTEP_BUILD_ID "unknown"
#endif

namespace skipstep {

inline constexpr const char* kBuildId = SKIPSTEP_BUILD_ID;

/// Sorted `key = value` lines. Holds no wall-clock values so that reruns
/// produce identical bytes.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos) {
      throw std::invalid_argument("manifest: bad key '" + key + "'");
    }
    if (value.find('\n') != std::string::npos) throw std::invalid_argument("manifest: multi-line value for " + key);
    entries_[key] = value;
  }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    set(key, std::string(buf));
  }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

  void merge(const Manifest& other, const std::string& prefix = "") {
    for (const auto& [k, v] : other.entries_) entries_[prefix + k] = v;
  }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& at(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw std::out_of_range("manifest has no key '" + key + "'");
    return it->second;
  }
  double number(const std::string& key) const { return std::stod(at(key)); }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string text() const {
    std::string s;
    for (const auto& [k, v] : entries_) s += k + " = " + v + "\n";
    return s;
  }

  static Manifest parse(const std::string& text) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw std::runtime_error("manifest: malformed line '" + line + "'");
      m.entries_[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
  }

  static Manifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace skipstep
