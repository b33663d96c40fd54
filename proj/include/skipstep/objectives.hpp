// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

// Model-backed objectives for the searches: a trained denoiser, a fixed
// condition batch with per-image seeds, and the DDIM sampler.

#pragma once

#include <skipstep/diffusion.hpp>
#include <skipstep/gamma_schedule.hpp>
#include <skipstep/image.hpp>
#include <skipstep/search.hpp>
#include <skipstep/unet.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace skipstep {

/// Runs a model at a fixed depth regardless of its active depth.
template <class Real>
class DepthView {
 public:
  DepthView(const DenoiserModel<Real>& model, std::size_t depth) : model_(&model), depth_(depth) {}
  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& c, std::span<const int> t) const {
    return model_->forward_at_depth(x, c, t, depth_);
  }

 private:
  const DenoiserModel<Real>* model_;
  std::size_t depth_;
};

/// Picks the depth from the (batch-uniform) timestep being evaluated.
template <class Real>
class StepDepthView {
 public:
  StepDepthView(const DenoiserModel<Real>& model, std::map<int, std::size_t> depth_at)
      : model_(&model), depth_at_(std::move(depth_at)) {}
  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& c, std::span<const int> t) const {
    const auto it = depth_at_.find(t.front());
    if (it == depth_at_.end()) {
      throw std::logic_error("step depth view: no depth for timestep " + std::to_string(t.front()));
    }
    return model_->forward_at_depth(x, c, t, it->second);
  }

 private:
  const DenoiserModel<Real>* model_;
  std::map<int, std::size_t> depth_at_;
};

/// Fixed sampling context shared by every probe of one search.
template <class Real>
struct SamplingContext {
  const NoiseSchedule* schedule = nullptr;
  Tensor<Real> condition;
  std::vector<std::uint64_t> seeds;
  Shape image_shape;
  double eta = 0.0;
  double guidance = 1.0;
  std::uint64_t noise_seed = 0;

  int t_max() const { return schedule->max_timestep(); }

  template <class Model>
  Tensor<Real> run(const Model& m, std::vector<int> timesteps, std::uint64_t& calls) const {
    SamplerSpec spec{eta, guidance, std::move(timesteps), noise_seed};
    auto out = ddim_sample<Real>(m, condition, spec, seeds, *schedule, image_shape);
    calls += out.model_evaluations;
    return std::move(out.images);
  }

  std::uint64_t calls_per_step() const { return seeds.size() * (guidance != 1.0 ? 2 : 1); }
};

/// Batch-mean MSE in [0, 1] pixel units.
template <class Real>
double batch_mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  return psnr(a, b).mean_mse;
}

/// Time-step search objective over a (possibly depth-skipped) model. The
/// reference always comes from `reference_model` so pruned searches are
/// measured against the unpruned output.
template <class Real, class Model, class RefModel = Model>
class ModelTsObjective {
 public:
  using Sample = Tensor<Real>;

  ModelTsObjective(const Model& model, const RefModel& reference_model, const SamplingContext<Real>& ctx,
                   std::size_t n, std::size_t N, double alpha)
      : model_(&model), ref_model_(&reference_model), ctx_(&ctx), n_(n), N_(N), alpha_(alpha) {}

  Sample reference() {
    if (!ref_cache_.defined()) {
      ref_cache_ = ctx_->run(*ref_model_, uniform_schedule(N_, ctx_->t_max()).timesteps, calls_);
    }
    return ref_cache_;
  }

  Sample sample(double gamma) { return ctx_->run(*model_, schedule_for(gamma).timesteps, calls_); }

  TimestepSchedule schedule_for(double gamma) const {
    return gamma_schedule({gamma, n_, static_cast<double>(ctx_->t_max()), alpha_});
  }

  double distance(const Sample& a, const Sample& b) const { return batch_mse(a, b); }
  std::uint64_t sampler_calls() const { return calls_; }
  std::uint64_t calls_per_step() const { return ctx_->calls_per_step(); }
  double min_gamma() const { return alpha_ / (alpha_ + ctx_->t_max()); }

  /// Supplies a precomputed reference; its cost is not counted.
  void set_reference(Sample ref) { ref_cache_ = std::move(ref); }

 private:
  const Model* model_;
  const RefModel* ref_model_;
  const SamplingContext<Real>* ctx_;
  std::size_t n_;
  std::size_t N_;
  double alpha_;
  std::uint64_t calls_ = 0;
  Sample ref_cache_;
};

/// Depth-search quality: mean PSNR of the depth-d output against the
/// full-depth output, both under the same schedule.
template <class Real>
class ModelDepthQuality {
 public:
  ModelDepthQuality(const DenoiserModel<Real>& model, const SamplingContext<Real>& ctx, std::vector<int> timesteps)
      : model_(&model), ctx_(&ctx), timesteps_(std::move(timesteps)) {}

  const Tensor<Real>& reference() {
    if (!ref_.defined()) ref_ = ctx_->run(DepthView<Real>(*model_, model_->max_depth()), timesteps_, calls_);
    return ref_;
  }

  double quality(std::size_t d) {
    const Tensor<Real>& ref = reference();
    if (auto it = cache_.find(d); it != cache_.end()) return it->second;
    const double q = psnr(ctx_->run(DepthView<Real>(*model_, d), timesteps_, calls_), ref).mean_psnr;
    cache_[d] = q;
    return q;
  }

  std::uint64_t sampler_calls() const { return calls_; }
  const std::vector<int>& timesteps() const { return timesteps_; }

 private:
  const DenoiserModel<Real>* model_;
  const SamplingContext<Real>* ctx_;
  std::vector<int> timesteps_;
  Tensor<Real> ref_;
  std::map<std::size_t, double> cache_;
  std::uint64_t calls_ = 0;
};

/// Quality of a per-step depth assignment against the full-depth output under
/// the same schedule. Steps are listed from the largest timestep down.
template <class Real>
double multi_depth_quality(const DenoiserModel<Real>& model, const SamplingContext<Real>& ctx,
                           const std::vector<int>& timesteps, const Tensor<Real>& reference,
                           const std::vector<std::size_t>& depth_per_step, std::uint64_t& calls) {
  if (depth_per_step.size() != timesteps.size()) {
    throw std::invalid_argument("multi-depth: " + std::to_string(depth_per_step.size()) + " depths for " +
                                std::to_string(timesteps.size()) + " steps");
  }
  std::map<int, std::size_t> depth_at;
  for (std::size_t i = 0; i < timesteps.size(); ++i) depth_at[timesteps[timesteps.size() - 1 - i]] = depth_per_step[i];
  return psnr(ctx.run(StepDepthView<Real>(model, std::move(depth_at)), timesteps, calls), reference).mean_psnr;
}

}  // namespace skipstep
