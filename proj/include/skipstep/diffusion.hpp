// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/ops.hpp>
#include <skipstep/rng.hpp>
#include <skipstep/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

/// Anything that predicts noise for a batch: the U-Net, test oracles, wrappers.
template <class M, class Real>
concept NoisePredictor = requires(const M& m, const Tensor<Real>& x, std::span<const int> t) {
  { m.forward(x, x, t) } -> std::same_as<Tensor<Real>>;
};

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  std::size_t size() const { return betas.size(); }
  int max_timestep() const { return static_cast<int>(betas.size()) - 1; }

  double alpha_bar(int t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= alpha_bars.size()) {
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(alpha_bars.size()) +
                              ")");
    }
    return alpha_bars[static_cast<std::size_t>(t)];
  }
};

/// Betas linear from 1e-4 to 0.02 over t = 0..T-1.
inline NoiseSchedule linear_beta_schedule(std::size_t T) {
  if (T < 2) throw std::invalid_argument("linear_beta_schedule: T must be >= 2, got " + std::to_string(T));
  NoiseSchedule s;
  s.betas.resize(T);
  s.alpha_bars.resize(T);
  constexpr double kStart = 1e-4;
  constexpr double kEnd = 0.02;
  double prod = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    s.betas[t] = t + 1 == T ? kEnd : kStart + (kEnd - kStart) * static_cast<double>(t) / static_cast<double>(T - 1);
    prod *= 1.0 - s.betas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, per sample timestep.
template <class Real>
Tensor<Real> q_sample(const Tensor<Real>& x0, std::span<const int> t, const Tensor<Real>& eps,
                      const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) {
    throw shape_error("q_sample: eps shape " + shape_str(eps.shape()) + " differs from x0 " + shape_str(x0.shape()));
  }
  if (t.size() != x0.dim(0)) throw std::invalid_argument("q_sample: one timestep per sample required");
  Tensor<Real> out(x0.shape());
  const std::size_t per = x0.numel() / x0.dim(0);
  for (std::size_t n = 0; n < t.size(); ++n) {
    const double ab = schedule.alpha_bar(t[n]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      out[i] = static_cast<Real>(a * static_cast<double>(x0[i]) + b * static_cast<double>(eps[i]));
    }
  }
  return out;
}

template <class Real>
Tensor<Real> q_sample(const Tensor<Real>& x0, int t, const Tensor<Real>& eps, const NoiseSchedule& schedule) {
  std::vector<int> ts(x0.dim(0), t);
  return q_sample(x0, std::span<const int>(ts), eps, schedule);
}

/// Noise-prediction objective: per sample a uniform timestep, standard-normal
/// noise and, with probability p_drop, an all-zero condition. Returns the
/// mean squared error between predicted and true noise as a scalar tensor,
/// recorded on the active tape.
template <class Real, class Model>
  requires NoisePredictor<Model, Real>
Tensor<Real> training_loss(const Model& model, const Tensor<Real>& x0, const Tensor<Real>& cond, std::uint64_t seed,
                           const NoiseSchedule& schedule, double p_drop = 0.1) {
  const std::size_t N = x0.dim(0);
  Rng rng(seed);
  std::vector<int> t(N);
  Tensor<Real> eps(x0.shape());
  Tensor<Real> c = cond.clone();
  const std::size_t per = x0.numel() / N;
  const std::size_t cper = cond.numel() / N;
  for (std::size_t n = 0; n < N; ++n) {
    t[n] = static_cast<int>(rng.uniform_int(0, schedule.max_timestep()));
    if (rng.bernoulli(p_drop)) std::fill_n(c.data() + n * cper, cper, Real(0));
    for (std::size_t i = 0; i < per; ++i) eps[n * per + i] = static_cast<Real>(rng.normal());
  }
  Tensor<Real> xt = q_sample(x0, std::span<const int>(t), eps, schedule);
  Tensor<Real> pred = model.forward(xt, c, std::span<const int>(t));
  return ops::scale(ops::squared_error(pred, eps), Real(1) / static_cast<Real>(pred.numel()));
}

struct SamplerSpec {
  /// 0 is deterministic DDIM; 1 matches the DDPM posterior deviation.
  double eta = 0.0;
  /// eps = eps_uncond + w (eps_cond - eps_uncond); w = 1 is the pure conditional path.
  double guidance = 1.0;
  /// Strictly increasing trained timesteps.
  std::vector<int> timesteps;
  std::uint64_t noise_seed = 0;
};

template <class Real>
struct SampleOutput {
  Tensor<Real> images;
  /// Per-image model evaluations summed over the batch.
  std::uint64_t model_evaluations = 0;
};

/// DDIM step deviation sigma for moving from abar_t to abar_prev.
inline double ddim_sigma(double eta, double abar_t, double abar_prev) {
  return eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * std::sqrt(1.0 - abar_t / abar_prev);
}

inline void validate_timesteps(std::span<const int> ts, const NoiseSchedule& schedule) {
  if (ts.empty()) throw std::invalid_argument("sampler: empty timestep schedule");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] < 0 || ts[i] > schedule.max_timestep()) {
      throw std::invalid_argument("sampler: timestep " + std::to_string(ts[i]) + " outside [0, " +
                                  std::to_string(schedule.max_timestep()) + "]");
    }
    if (i > 0 && ts[i] <= ts[i - 1]) throw std::invalid_argument("sampler: timesteps must be strictly increasing");
  }
}

/// Standard-normal starting noise for one image from its seed.
template <class Real>
void initial_noise(std::uint64_t image_seed, std::span<Real> out) {
  Rng rng(Rng::derive(image_seed, "x_T"));
  for (Real& v : out) v = static_cast<Real>(rng.normal());
}

/// DDIM over an arbitrary increasing timestep subsequence, from the largest
/// scheduled timestep down. The last update returns the x0 prediction at the
/// smallest scheduled timestep, clamped to [-1, 1].
///
/// image_seeds holds one seed per batch item; starting noise and per-step
/// noise derive from it, so an image's result does not depend on the batch it
/// is sampled in.
template <class Real, class Model>
  requires NoisePredictor<Model, Real>
SampleOutput<Real> ddim_sample(const Model& model, const Tensor<Real>& cond, const SamplerSpec& spec,
                               std::span<const std::uint64_t> image_seeds, const NoiseSchedule& schedule,
                               const Shape& image_shape) {
  validate_timesteps(spec.timesteps, schedule);
  const std::size_t N = cond.dim(0);
  if (image_seeds.size() != N) throw std::invalid_argument("sampler: one seed per condition image required");
  Shape shape{N};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  Tensor<Real> x(shape);
  const std::size_t per = x.numel() / N;
  std::vector<Rng> step_noise;
  step_noise.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    initial_noise<Real>(image_seeds[n], x.values().subspan(n * per, per));
    step_noise.emplace_back(Rng::derive(Rng::derive(image_seeds[n], "ddim.z"), spec.noise_seed));
  }
  const bool guided = spec.guidance != 1.0;
  Tensor<Real> uncond = guided ? Tensor<Real>(cond.shape(), Real(0)) : Tensor<Real>();

  SampleOutput<Real> result;
  const auto& ts = spec.timesteps;
  for (std::size_t i = ts.size(); i-- > 0;) {
    const int tau = ts[i];
    std::vector<int> tb(N, tau);
    Tensor<Real> eps = model.forward(x, cond, std::span<const int>(tb));
    result.model_evaluations += N;
    if (guided) {
      Tensor<Real> eps_u = model.forward(x, uncond, std::span<const int>(tb));
      result.model_evaluations += N;
      for (std::size_t k = 0; k < eps.numel(); ++k) {
        eps[k] = static_cast<Real>(static_cast<double>(eps_u[k]) +
                                   spec.guidance * (static_cast<double>(eps[k]) - static_cast<double>(eps_u[k])));
      }
    }
    const double ab = schedule.alpha_bar(tau);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    if (i == 0) {
      for (std::size_t k = 0; k < x.numel(); ++k) {
        const double x0 = (static_cast<double>(x[k]) - sb * static_cast<double>(eps[k])) / sa;
        x[k] = static_cast<Real>(std::clamp(x0, -1.0, 1.0));
      }
      break;
    }
    const double abp = schedule.alpha_bar(ts[i - 1]);
    const double sigma = ddim_sigma(spec.eta, ab, abp);
    const double dir = std::sqrt(std::max(0.0, 1.0 - abp - sigma * sigma));
    const double sap = std::sqrt(abp);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = n * per; k < (n + 1) * per; ++k) {
        const double e = static_cast<double>(eps[k]);
        const double x0 = (static_cast<double>(x[k]) - sb * e) / sa;
        double next = sap * x0 + dir * e;
        if (sigma > 0.0) next += sigma * step_noise[n].normal();
        x[k] = static_cast<Real>(next);
      }
    }
  }
  if (!x.all_finite()) throw std::runtime_error("sampler produced non-finite values");
  result.images = std::move(x);
  return result;
}

}  // namespace skipstep
