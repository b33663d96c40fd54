// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/rng.hpp>
#include <skipstep/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace skipstep {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

/// Compares tape gradients with central differences at randomly chosen
/// parameter entries. `loss` must rebuild the computation from the current
/// parameter values on every call and return a scalar.
///
/// Relative error is |g - fd| / max(|g|, |fd|, floor); the floor keeps entries
/// whose true gradient is ~0 from dividing rounding noise by itself.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                                  std::vector<Tensor<double>> params, std::size_t probes, double fd_step,
                                  std::uint64_t seed, double floor = 1e-6) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> l = loss();
    tape.backward(l);
  }
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();

  Rng rng(seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < probes; ++k) {
    auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    std::size_t which = 0;
    while (flat >= params[which].numel()) flat -= params[which++].numel();
    Tensor<double>& p = params[which];
    const double analytic = p.has_grad() ? p.grad()[flat] : 0.0;
    const double orig = p[flat];
    p[flat] = orig + fd_step;
    const double up = loss().item();
    p[flat] = orig - fd_step;
    const double down = loss().item();
    p[flat] = orig;
    const double numeric = (up - down) / (2.0 * fd_step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.probes;
  }
  return result;
}

}  // namespace skipstep
