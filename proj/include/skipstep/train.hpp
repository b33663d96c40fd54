// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/adam.hpp>
#include <skipstep/diffusion.hpp>
#include <skipstep/rng.hpp>
#include <skipstep/tasks.hpp>
#include <skipstep/unet.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

/// The whole training split, materialised once in the model domain.
template <class Real>
struct TrainingSet {
  Tensor<Real> condition;
  Tensor<Real> target;

  static TrainingSet generate(const DataSpec& d, const DatasetSplit& split) {
    split.validate();
    std::vector<std::uint64_t> seeds(split.train_count);
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = split.train_seed(i);
    auto b = make_batch<Real>(d, seeds);
    return {std::move(b.condition), std::move(b.target)};
  }

  std::size_t size() const { return target.dim(0); }

  /// Rows `idx` of condition and target.
  std::pair<Tensor<Real>, Tensor<Real>> gather(const std::vector<std::size_t>& idx) const {
    const auto pick = [&](const Tensor<Real>& src) {
      Shape s = src.shape();
      s[0] = idx.size();
      Tensor<Real> out(s);
      const std::size_t per = src.numel() / src.dim(0);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(src.data() + idx[k] * per, per, out.data() + k * per);
      }
      return out;
    };
    return {pick(condition), pick(target)};
  }
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double lr = 1e-3;
  double p_drop = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Linear learning-rate ramp over the first steps; 0 disables.
  std::size_t warmup_steps = 200;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainLog {
  /// Every step's loss.
  std::vector<double> losses;
  /// Sampled every log_every steps.
  std::vector<LossRecord> records;

  double window_mean(std::size_t begin, std::size_t count) const {
    if (begin + count > losses.size() || count == 0) throw std::out_of_range("loss window outside the log");
    double s = 0.0;
    for (std::size_t i = begin; i < begin + count; ++i) s += losses[i];
    return s / static_cast<double>(count);
  }
};

/// Adam over the noise-prediction loss for `params` (a subset of the model's
/// parameters when fine-tuning). Batch indices and per-step noise derive from
/// (cfg.seed, step), so a run is a pure function of its inputs.
template <class Real>
TrainLog train_steps(DenoiserModel<Real>& model, std::vector<NamedTensor<Real>> params, const TrainingSet<Real>& data,
                     const NoiseSchedule& schedule, const TrainConfig& cfg,
                     const std::function<void(const LossRecord&)>& on_log = {}) {
  if (cfg.batch == 0) throw std::invalid_argument("train: batch must be positive");
  TrainLog log;
  if (cfg.steps == 0) return log;
  for (auto& p : params) p.tensor.set_requires_grad(true);
  Adam<Real> opt(std::move(params), {cfg.lr});
  const std::uint64_t batch_stream = Rng::derive(cfg.seed, "train.batch");
  const std::uint64_t noise_stream = Rng::derive(cfg.seed, "train.noise");
  std::vector<std::size_t> idx(cfg.batch);
  log.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng pick(Rng::derive(batch_stream, step));
    for (auto& i : idx) i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
    auto [cond, x0] = data.gather(idx);
    Tape<Real> tape;
    TapeScope<Real> scope(tape);
    opt.zero_grad();
    Tensor<Real> loss = training_loss(model, x0, cond, Rng::derive(noise_stream, step), schedule, cfg.p_drop);
    const double l = static_cast<double>(loss.item());
    if (!std::isfinite(l)) throw std::runtime_error("training loss is not finite at step " + std::to_string(step));
    tape.backward(loss);
    clip_grad_norm(opt.params(), cfg.grad_clip);
    if (step < cfg.warmup_steps) {
      opt.set_lr(cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
    } else {
      opt.set_lr(cfg.lr);
    }
    opt.step();
    log.losses.push_back(l);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      log.records.push_back({step, l});
      if (on_log) on_log(log.records.back());
    }
  }
  for (auto& p : model.params()) {
    p.tensor.set_requires_grad(false);
    p.tensor.drop_grad();
  }
  return log;
}

/// Trains every parameter.
template <class Real>
TrainLog train(DenoiserModel<Real>& model, const TrainingSet<Real>& data, const NoiseSchedule& schedule,
               const TrainConfig& cfg, const std::function<void(const LossRecord&)>& on_log = {}) {
  return train_steps(model, model.params(), data, schedule, cfg, on_log);
}

struct FinetuneConfig {
  double lr_scale = 0.3;
  double step_fraction = 0.25;
};

/// Fine-tunes the model pruned at `depth`: only parameters owned by depths
/// <= depth are optimised, at a reduced learning rate and step budget.
/// Returns an empty log (and does nothing) when depth is the full depth.
template <class Real>
TrainLog finetune(DenoiserModel<Real>& model, std::size_t depth, const TrainingSet<Real>& data,
                  const NoiseSchedule& schedule, const TrainConfig& base, const FinetuneConfig& ft = {},
                  const std::function<void(const LossRecord&)>& on_log = {}) {
  if (depth >= model.max_depth()) return {};
  TrainConfig cfg = base;
  cfg.lr = base.lr * ft.lr_scale;
  cfg.steps = static_cast<std::size_t>(std::llround(static_cast<double>(base.steps) * ft.step_fraction));
  cfg.seed = Rng::derive(base.seed, "finetune");
  const std::size_t prev = model.active_depth();
  model.set_active_depth(depth);
  TrainLog log;
  try {
    log = train_steps(model, model.params_up_to_depth(depth), data, schedule, cfg, on_log);
  } catch (...) {
    model.set_active_depth(prev);
    throw;
  }
  return log;
}

}  // namespace skipstep
