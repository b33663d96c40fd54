// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace skipstep {

/// Seedable random stream backed by std::mt19937_64.
///
/// Sub-streams are obtained by hashing (parent seed, label) rather than by
/// drawing from the parent, so a component's stream does not depend on how
/// many numbers any other component consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static constexpr std::uint64_t derive(std::uint64_t parent, std::string_view label) {
    return mix(mix(parent) ^ hash_label(label));
  }

  static constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t index) {
    return mix(mix(parent) ^ mix(index + 0x632be59bd9b4e019ULL));
  }

  Rng split(std::string_view label) const { return Rng(derive(seed_, label)); }
  Rng split(std::uint64_t index) const { return Rng(derive(seed_, index)); }

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  double normal() { return normal_(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace skipstep
