// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

/// Default scale-down strength as a fraction of the timestep range.
inline constexpr double kDefaultAlphaFraction = 0.03;

struct GammaSpec {
  double gamma = 1.0;
  std::size_t n = 10;
  /// Largest usable timestep (T - 1 for a T-step noise schedule).
  double t_max = 999.0;
  double alpha = 0.0;

  static GammaSpec with_default_alpha(double gamma, std::size_t n, double t_max) {
    return {gamma, n, t_max, kDefaultAlphaFraction * (t_max + 1.0)};
  }

  void validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive and finite");
    if (n < 2) throw std::invalid_argument("gamma schedule needs n >= 2, got " + std::to_string(n));
    if (!(t_max > 0.0)) throw std::invalid_argument("t_max must be positive");
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (gamma < 1.0 && alpha * (1.0 / gamma - 1.0) >= t_max) {
      throw std::invalid_argument("scale-down lower bound alpha*(1/gamma-1) = " +
                                  std::to_string(alpha * (1.0 / gamma - 1.0)) + " reaches t_max");
    }
  }
};

/// t_max * (i/(n-1))^gamma for i = 0..n-1. Ignores alpha.
inline std::vector<double> gamma_curve(const GammaSpec& spec) {
  spec.validate();
  std::vector<double> out(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(spec.n - 1);
    out[i] = spec.t_max * std::pow(t, spec.gamma);
  }
  out.back() = spec.t_max;
  return out;
}

/// Gamma curve over a remapped abscissa. gamma >= 1 widens the upper bound to
/// t_max + alpha(gamma - 1), pulling the last point below t_max; gamma < 1
/// lowers the bound to alpha(1 - 1/gamma) < 0, lifting the first point above 0.
inline std::vector<double> scaled_gamma_curve(const GammaSpec& spec) {
  spec.validate();
  const double T = spec.t_max;
  double lo = 0.0, hi = T;
  if (spec.gamma >= 1.0) {
    hi = T + spec.alpha * (spec.gamma - 1.0);
  } else {
    lo = spec.alpha * (1.0 - 1.0 / spec.gamma);
  }
  std::vector<double> out(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(spec.n - 1);
    const double tp = (T * t - lo) / (hi - lo);
    out[i] = T * std::pow(tp, spec.gamma);
  }
  return out;
}

struct TimestepSchedule {
  std::vector<int> timesteps;
  /// "uniform" or "gamma=<g>,alpha=<a>".
  std::string provenance;

  std::size_t size() const { return timesteps.size(); }

  /// Comma-separated timesteps, no trailing newline.
  std::string csv() const {
    std::string s;
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(timesteps[i]);
    }
    return s;
  }
};

/// Rounds to the nearest integer, then makes the sequence strictly
/// increasing: later duplicates move up by one, and if that runs past t_max
/// the tail is pinned at t_max and earlier entries move down.
inline std::vector<int> discretize(std::span<const double> points, int t_max) {
  const std::size_t n = points.size();
  if (n == 0) throw std::invalid_argument("discretize: no points");
  if (t_max < 0) throw std::invalid_argument("discretize: negative t_max");
  if (n > static_cast<std::size_t>(t_max) + 1) {
    throw std::invalid_argument("discretize: " + std::to_string(n) + " distinct timesteps do not fit in [0, " +
                                std::to_string(t_max) + "]");
  }
  std::vector<int> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = points[i];
    if (!std::isfinite(p) || p < -0.5 || p > t_max + 0.5) {
      throw std::invalid_argument("discretize: point " + std::to_string(p) + " outside [0, t_max]");
    }
    if (i > 0 && p < points[i - 1]) throw std::invalid_argument("discretize: points must be non-decreasing");
    r[i] = static_cast<int>(std::lround(p));
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (r[i] <= r[i - 1]) r[i] = r[i - 1] + 1;
  }
  if (r.back() > t_max) {
    r.back() = t_max;
    for (std::size_t i = n - 1; i-- > 0;) {
      if (r[i] >= r[i + 1]) r[i] = r[i + 1] - 1;
    }
  }
  return r;
}

inline std::string gamma_provenance(const GammaSpec& spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "gamma=%.6g,alpha=%.6g", spec.gamma, spec.alpha);
  return buf;
}

inline TimestepSchedule gamma_schedule(const GammaSpec& spec) {
  const auto pts = scaled_gamma_curve(spec);
  return {discretize(pts, static_cast<int>(std::lround(spec.t_max))), gamma_provenance(spec)};
}

inline TimestepSchedule uniform_schedule(std::size_t n, int t_max) {
  const auto pts = gamma_curve({1.0, n, static_cast<double>(t_max), 0.0});
  return {discretize(pts, t_max), "uniform"};
}

}  // namespace skipstep
