// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

// Workflow phases over one run directory. Each phase reads the artifacts of
// earlier phases, writes its own files and a `<phase>.manifest`, and never
// replaces an existing file unless forced.
//
// Run directory contents:
//   data.manifest, data/{train,val}_seeds.csv, data/val_<i>_{condition,target}.p?m
//   model.ckpt, train_loss.csv, train.manifest
//   depth_search.csv, depth_search.manifest
//   pruned.ckpt, finetune_loss.csv, finetune.manifest
//   ts_search_w<w>.csv, ts_search.manifest
//   multi_depth.csv, pareto.csv, multi_depth.manifest
//   depth_profile.csv, profile.manifest
//   samples/, sample.manifest
//   eval.csv, eval/, evaluate.manifest
//   report.csv, summary.txt, manifest.txt

#pragma once

#include <skipstep/checkpoint.hpp>
#include <skipstep/config.hpp>
#include <skipstep/manifest.hpp>
#include <skipstep/objectives.hpp>
#include <skipstep/train.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace skipstep {

using Real32 = float;

/// Guards a run directory against silent overwrites.
class RunDir {
 public:
  RunDir(std::filesystem::path root, bool force) : root_(std::move(root)), force_(force) {
    std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }
  bool exists(const std::string& rel) const { return std::filesystem::exists(path(rel)); }

  /// Path for a new artifact; throws if it exists and overwriting is not forced.
  std::filesystem::path claim(const std::string& rel) const {
    const auto p = path(rel);
    if (std::filesystem::exists(p) && !force_) {
      throw std::runtime_error(p.string() + " already exists (use --force to overwrite)");
    }
    std::filesystem::create_directories(p.parent_path());
    return p;
  }

  void write_text(const std::string& rel, const std::string& text) const {
    std::ofstream out(claim(rel), std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path(rel).string());
  }

  void write_manifest(const std::string& phase, const Manifest& m) const { write_text(phase + ".manifest", m.text()); }

  Manifest read_manifest(const std::string& phase) const {
    if (!exists(phase + ".manifest")) {
      throw std::runtime_error("missing " + path(phase + ".manifest").string() + " (run the " + phase +
                               " phase first)");
    }
    return Manifest::load(path(phase + ".manifest"));
  }

 private:
  std::filesystem::path root_;
  bool force_;
};

using LogFn = std::function<void(const std::string&)>;

inline LogFn stderr_log() {
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

inline Manifest config_manifest(const RunConfig& cfg) {
  Manifest m;
  for (const auto& [k, v] : cfg.entries()) m.set("config." + k, v);
  m.set("build_id", kBuildId);
  return m;
}

inline std::string guidance_tag(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", w);
  return buf;
}

/// Validation batch (model domain) and a sampling context over it.
struct ValidationSet {
  Batch<Real32> batch;
  SamplingContext<Real32> ctx;
};

inline SamplingContext<Real32> make_context(const RunConfig& cfg, const NoiseSchedule& schedule,
                                            const Batch<Real32>& batch, double guidance = 1.0) {
  SamplingContext<Real32> ctx;
  ctx.schedule = &schedule;
  ctx.condition = batch.condition;
  ctx.seeds.clear();
  // Sampler noise is keyed by image seed and the run's sample seed.
  for (auto s : batch.seeds) ctx.seeds.push_back(Rng::derive(cfg.seeds.sample, s));
  ctx.image_shape = {cfg.channels, cfg.image_size, cfg.image_size};
  ctx.eta = cfg.eta_ddim;
  ctx.guidance = guidance;
  ctx.noise_seed = cfg.seeds.sample;
  return ctx;
}

inline Batch<Real32> search_batch(const RunConfig& cfg, std::size_t count) {
  const auto seeds = sample_train_seeds(cfg.split, count, cfg.seeds.search);
  return make_batch<Real32>(cfg.data(), seeds);
}

inline std::string loss_csv(const TrainLog& log) {
  std::string s = "step,loss\n";
  char buf[64];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", r.step, r.loss);
    s += buf;
  }
  return s;
}

// ---- phases -------------------------------------------------------------------------

inline Manifest gen_data_phase(const RunConfig& cfg, const RunDir& dir) {
  std::string tr = "index,seed\n", va = "index,seed\n";
  for (std::size_t i = 0; i < cfg.split.train_count; ++i) {
    tr += std::to_string(i) + "," + std::to_string(cfg.split.train_seed(i)) + "\n";
  }
  for (std::size_t i = 0; i < cfg.split.val_count; ++i) {
    va += std::to_string(i) + "," + std::to_string(cfg.split.val_seed(i)) + "\n";
  }
  dir.write_text("data/train_seeds.csv", tr);
  dir.write_text("data/val_seeds.csv", va);
  const std::string ext = cfg.channels == 3 ? ".ppm" : ".pgm";
  QualityResult q;
  for (std::size_t i = 0; i < cfg.split.val_count; ++i) {
    const TaskPair p = make_pair(cfg.data(), cfg.split.val_seed(i));
    if (cfg.task == TaskKind::Restore) q.add(mse(p.condition.pixels, p.target.pixels));
    if (i < cfg.eval_dump_images) {
      const std::string base = "data/val_" + std::to_string(i);
      write_pnm(dir.claim(base + "_condition" + (p.condition.channels == 3 ? ".ppm" : ".pgm")), p.condition);
      write_pnm(dir.claim(base + "_target" + ext), p.target);
    }
  }
  q.finalize();
  Manifest m = config_manifest(cfg);
  m.set("data.train_count", static_cast<std::uint64_t>(cfg.split.train_count));
  m.set("data.val_count", static_cast<std::uint64_t>(cfg.split.val_count));
  m.set("data.val_first_seed", cfg.split.val_seed(0));
  if (cfg.task == TaskKind::Restore) m.set("data.condition_psnr", q.mean_psnr);
  dir.write_manifest("data", m);
  return m;
}

inline Manifest train_phase(const RunConfig& cfg, const RunDir& dir, const LogFn& log = stderr_log()) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  auto model = DenoiserModel<Real32>::build(cfg.unet(), cfg.seeds.init);
  const auto data = TrainingSet<Real32>::generate(cfg.data(), cfg.split);
  const auto ckpt = dir.claim("model.ckpt");
  const auto tlog = train(model, data, schedule, cfg.train, [&](const LossRecord& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "train step %zu loss %.5f", r.step, r.loss);
    log(buf);
  });
  const auto bytes = serialize_checkpoint(model);
  write_file_bytes(ckpt, bytes);
  dir.write_text("train_loss.csv", loss_csv(tlog));
  Manifest m = config_manifest(cfg);
  m.set("train.parameters", static_cast<std::uint64_t>(model.parameter_count()));
  m.set("train.steps", static_cast<std::uint64_t>(cfg.train.steps));
  m.set("train.checkpoint", "model.ckpt");
  m.set("train.checkpoint_fnv1a", fnv1a64(bytes.data(), bytes.size()));
  if (cfg.train.steps > 0) {
    const std::size_t w = std::min<std::size_t>(100, cfg.train.steps);
    m.set("train.loss_first_window", tlog.window_mean(0, w));
    m.set("train.loss_last_window", tlog.window_mean(cfg.train.steps - w, w));
  }
  dir.write_manifest("train", m);
  return m;
}

inline DenoiserModel<Real32> load_run_model(const RunDir& dir, const std::string& rel = "model.ckpt") {
  if (!dir.exists(rel)) throw std::runtime_error("missing " + dir.path(rel).string() + " (run train first)");
  return load_checkpoint<Real32>(dir.path(rel));
}

inline Manifest depth_search_phase(const RunConfig& cfg, const RunDir& dir) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  const auto model = load_run_model(dir);
  const auto batch = search_batch(cfg, cfg.depth_batch);
  const auto ctx = make_context(cfg, schedule, batch);
  ModelDepthQuality<Real32> quality(model, ctx, uniform_schedule(cfg.depth_N, cfg.t_max()).timesteps);
  quality.reference();
  auto res = depth_search(quality, model.max_depth(), cfg.depth_threshold,
                          [&] { return quality.sampler_calls(); });
  dir.write_text("depth_search.csv", res.report.csv());
  Manifest m = config_manifest(cfg);
  m.set("depth.d_star", static_cast<std::uint64_t>(res.depth));
  m.set("depth.d_max", static_cast<std::uint64_t>(model.max_depth()));
  m.set("depth.no_compression", res.no_compression);
  m.set("depth.threshold", cfg.depth_threshold);
  m.set("depth.param_fraction", static_cast<double>(model.parameter_count_at_depth(res.depth)) /
                                    static_cast<double>(model.parameter_count()));
  m.set("depth.sampler_calls", quality.sampler_calls());
  for (const auto& p : res.report.probes) {
    m.set("depth.quality.d" + std::to_string(static_cast<int>(p.value)), p.metric);
  }
  dir.write_manifest("depth_search", m);
  return m;
}

inline Manifest finetune_phase(const RunConfig& cfg, const RunDir& dir, std::optional<std::size_t> depth = {},
                               const LogFn& log = stderr_log()) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  auto model = load_run_model(dir);
  const std::size_t d =
      depth ? *depth : static_cast<std::size_t>(dir.read_manifest("depth_search").number("depth.d_star"));
  Manifest m = config_manifest(cfg);
  m.set("finetune.depth", static_cast<std::uint64_t>(d));
  if (d >= model.max_depth()) {
    log("finetune: depth " + std::to_string(d) + " is the full model; nothing to fine-tune");
    m.set("finetune.skipped", true);
    dir.write_manifest("finetune", m);
    return m;
  }
  const auto data = TrainingSet<Real32>::generate(cfg.data(), cfg.split);
  const auto ckpt = dir.claim("pruned.ckpt");
  const auto tlog = finetune(model, d, data, schedule, cfg.train, cfg.finetune, [&](const LossRecord& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "finetune step %zu loss %.5f", r.step, r.loss);
    log(buf);
  });
  const auto bytes = serialize_checkpoint(model);
  write_file_bytes(ckpt, bytes);
  dir.write_text("finetune_loss.csv", loss_csv(tlog));
  m.set("finetune.skipped", false);
  m.set("finetune.steps", static_cast<std::uint64_t>(tlog.losses.size()));
  m.set("finetune.checkpoint", "pruned.ckpt");
  m.set("finetune.checkpoint_fnv1a", fnv1a64(bytes.data(), bytes.size()));
  dir.write_manifest("finetune", m);
  return m;
}

struct TsPhaseResult {
  double guidance = 1.0;
  TsResult result;
  TimestepSchedule schedule;
};

/// One time-step search per configured guidance scale on `model`.
inline std::vector<TsPhaseResult> run_ts_searches(const RunConfig& cfg, const DenoiserModel<Real32>& model,
                                                  const DenoiserModel<Real32>& reference_model) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  const auto batch = search_batch(cfg, cfg.ts_batch);
  std::vector<TsPhaseResult> out;
  for (double w : cfg.ts_guidance) {
    const auto ctx = make_context(cfg, schedule, batch, w);
    ModelTsObjective<Real32, DenoiserModel<Real32>> obj(model, reference_model, ctx, cfg.ts_n, cfg.ts_N, cfg.alpha());
    const auto t0 = std::chrono::steady_clock::now();
    TsPhaseResult r{w, ts_optimize(obj, cfg.ts_config(w)), {}};
    r.result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.schedule = r.result.gamma == 1.0 ? uniform_schedule(cfg.ts_n, cfg.t_max()) : obj.schedule_for(r.result.gamma);
    out.push_back(std::move(r));
  }
  return out;
}

/// Searches on the pruned model when `use_pruned` and one exists.
inline Manifest ts_search_phase(const RunConfig& cfg, const RunDir& dir, bool use_pruned = false) {
  const auto full = load_run_model(dir);
  std::optional<DenoiserModel<Real32>> pruned;
  if (use_pruned) pruned = load_run_model(dir, "pruned.ckpt");
  const auto results = run_ts_searches(cfg, pruned ? *pruned : full, full);
  Manifest m = config_manifest(cfg);
  m.set("ts.model", pruned ? "pruned.ckpt" : "model.ckpt");
  for (const auto& r : results) {
    const std::string w = guidance_tag(r.guidance);
    const std::string k = "ts.w" + w + ".";
    dir.write_text("ts_search_w" + w + ".csv", r.result.report.csv());
    m.set(k + "gamma", r.result.gamma);
    m.set(k + "sign", r.result.sign);
    m.set(k + "schedule", r.schedule.csv());
    m.set(k + "probes", static_cast<std::uint64_t>(r.result.report.probes.size()));
    m.set(k + "sampler_calls", r.result.report.sampler_calls);
    m.set(k + "analytic_calls", r.result.report.analytic_calls);
    m.set(k + "warning", r.result.report.warning);
  }
  dir.write_manifest("ts_search", m);
  return m;
}

struct MultiDepthOutcome {
  std::vector<MultiDepthRow> rows;
  std::vector<ParetoLine> pareto;
  std::uint64_t sampler_calls = 0;
};

inline MultiDepthOutcome run_multi_depth(const RunConfig& cfg, const DenoiserModel<Real32>& model,
                                         const SamplingContext<Real32>& ctx) {
  MultiDepthConfig mc{cfg.multi_depths, cfg.multi_n, cfg.multi_group};
  mc.validate();
  const auto steps = uniform_schedule(cfg.multi_n, cfg.t_max()).timesteps;
  MultiDepthOutcome out;
  const Tensor<Real32> ref = ctx.run(DepthView<Real32>(model, model.max_depth()), steps, out.sampler_calls);
  const auto& ucfg = model.config();
  const double full_macs = static_cast<double>(forward_macs(ucfg, model.max_depth()));
  out.rows = multi_depth_enumerate(
      mc,
      [&](const std::vector<std::size_t>& per_step) {
        return multi_depth_quality(model, ctx, steps, ref, per_step, out.sampler_calls);
      },
      [&](std::size_t d) {
        return static_cast<double>(model.parameter_count_at_depth(d)) / static_cast<double>(model.parameter_count());
      },
      [&](std::size_t d) { return static_cast<double>(forward_macs(ucfg, d)) / full_macs; });
  out.pareto = pareto_report(out.rows);
  return out;
}

inline std::string multi_depth_csv(const std::vector<MultiDepthRow>& rows) {
  std::string s = "row,group_depths,max_depth,psnr,param_fraction,mac_fraction\n";
  char buf[160];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::string dv;
    for (std::size_t g = 0; g < r.group_depths.size(); ++g) dv += (g ? "-" : "") + std::to_string(r.group_depths[g]);
    std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%.6f,%.9f,%.9f\n", i, dv.c_str(), r.max_depth(), r.quality,
                  r.param_fraction, r.mac_fraction);
    s += buf;
  }
  return s;
}

inline Manifest multi_depth_phase(const RunConfig& cfg, const RunDir& dir) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  const auto model = load_run_model(dir);
  const auto batch = search_batch(cfg, cfg.depth_batch);
  const auto ctx = make_context(cfg, schedule, batch);
  const auto out = run_multi_depth(cfg, model, ctx);
  dir.write_text("multi_depth.csv", multi_depth_csv(out.rows));
  dir.write_text("pareto.csv", pareto_csv(out.pareto));
  Manifest m = config_manifest(cfg);
  m.set("multi.rows", static_cast<std::uint64_t>(out.rows.size()));
  m.set("multi.sampler_calls", out.sampler_calls);
  for (const auto& l : out.pareto) {
    const std::string k = "multi.d" + std::to_string(l.depth) + ".";
    m.set(k + "psnr", l.quality);
    if (!l.fix_param_min_time.empty) m.set(k + "a_dmac", l.fix_param_min_time.d_mac);
    if (!l.fix_time_max_quality.empty) m.set(k + "b_dpsnr", l.fix_time_max_quality.d_quality);
    if (!l.fix_quality_min_time.empty) m.set(k + "c_dmac", l.fix_quality_min_time.d_mac);
  }
  dir.write_manifest("multi_depth", m);
  return m;
}

inline Manifest profile_phase(const RunConfig& cfg, const RunDir& dir) {
  const UNetConfig ucfg = dir.exists("model.ckpt") ? load_run_model(dir).config() : cfg.unet();
  const DepthProfile prof = depth_profile(ucfg);
  dir.write_text("depth_profile.csv", prof.csv());
  Manifest m = config_manifest(cfg);
  m.set("profile.total_params", static_cast<std::uint64_t>(prof.total_params));
  m.set("profile.total_macs", prof.total_macs);
  m.set("profile.d_max", static_cast<std::uint64_t>(ucfg.max_depth()));
  dir.write_manifest("profile", m);
  return m;
}

struct SampleOptions {
  std::size_t steps = 10;
  double gamma = 1.0;
  std::size_t depth = 0;
  std::size_t count = 8;
};

inline Manifest sample_phase(const RunConfig& cfg, const RunDir& dir, const SampleOptions& opt) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  const auto model = load_run_model(dir);
  const std::size_t count = std::min(opt.count, cfg.split.val_count);
  if (count == 0) throw std::invalid_argument("sample: nothing to sample");
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = cfg.split.val_seed(i);
  const auto batch = make_batch<Real32>(cfg.data(), seeds);
  const auto ctx = make_context(cfg, schedule, batch, cfg.ts_guidance.front());
  const std::size_t depth = opt.depth == 0 ? model.max_depth() : opt.depth;
  const GammaSpec gs{opt.gamma, opt.steps, static_cast<double>(cfg.t_max()), cfg.alpha()};
  const auto sched = gamma_schedule(gs);
  std::uint64_t calls = 0;
  const auto out = ctx.run(DepthView<Real32>(model, depth), sched.timesteps, calls);
  const std::string ext = cfg.channels == 3 ? ".ppm" : ".pgm";
  for (std::size_t i = 0; i < count; ++i) {
    write_pnm(dir.claim("samples/val_" + std::to_string(i) + ext), from_model_batch(out, i));
  }
  Manifest m = config_manifest(cfg);
  m.set("sample.schedule", sched.csv());
  m.set("sample.depth", static_cast<std::uint64_t>(depth));
  m.set("sample.count", static_cast<std::uint64_t>(count));
  m.set("sample.sampler_calls", calls);
  m.set("sample.target_psnr", psnr(out, batch.target).mean_psnr);
  dir.write_manifest("sample", m);
  return m;
}

struct EvalMethod {
  std::string name;
  std::size_t steps = 0;
  std::vector<int> timesteps;
  bool pruned = false;
};

/// Validation PSNR of each method against the full model's reference-step
/// uniform DDIM output on the same seeds.
inline Manifest evaluate_phase(const RunConfig& cfg, const RunDir& dir) {
  const NoiseSchedule schedule = linear_beta_schedule(cfg.timesteps);
  const auto full = load_run_model(dir);
  std::optional<DenoiserModel<Real32>> pruned;
  if (dir.exists("pruned.ckpt")) pruned = load_run_model(dir, "pruned.ckpt");
  std::optional<Manifest> ts;
  if (dir.exists("ts_search.manifest")) ts = dir.read_manifest("ts_search");
  const double w = cfg.ts_guidance.front();
  const std::string tsk = "ts.w" + guidance_tag(w) + ".";

  const auto val = make_batch<Real32>(cfg.data(), cfg.split.val_seeds());
  const auto ctx = make_context(cfg, schedule, val, w);
  std::uint64_t calls = 0;
  const auto ref = ctx.run(full, uniform_schedule(cfg.eval_reference_steps, cfg.t_max()).timesteps, calls);

  std::vector<EvalMethod> methods;
  for (std::size_t n : cfg.eval_steps) {
    methods.push_back({"uniform", n, uniform_schedule(n, cfg.t_max()).timesteps, false});
    if (ts && n == cfg.ts_n) {
      const GammaSpec gs{ts->number(tsk + "gamma"), n, static_cast<double>(cfg.t_max()), cfg.alpha()};
      methods.push_back({"optimized", n, gamma_schedule(gs).timesteps, false});
    }
    if (pruned) methods.push_back({"pruned_uniform", n, uniform_schedule(n, cfg.t_max()).timesteps, true});
  }

  Manifest m = config_manifest(cfg);
  std::string csv = "method,steps,image_index,seed,mse,psnr\n";
  const std::string ext = cfg.channels == 3 ? ".ppm" : ".pgm";
  const std::size_t dumps = std::min(cfg.eval_dump_images, cfg.split.val_count);
  for (std::size_t i = 0; i < dumps; ++i) {
    const std::string base = "eval/val_" + std::to_string(i) + "_";
    write_pnm(dir.claim(base + "condition" + (val.condition.dim(1) == 3 ? ".ppm" : ".pgm")),
              from_model_batch(val.condition, i));
    write_pnm(dir.claim(base + "target" + ext), from_model_batch(val.target, i));
    write_pnm(dir.claim(base + "reference" + ext), from_model_batch(ref, i));
  }
  for (const auto& meth : methods) {
    const auto out = meth.pruned ? ctx.run(*pruned, meth.timesteps, calls) : ctx.run(full, meth.timesteps, calls);
    const QualityResult q = psnr(out, ref);
    char buf[128];
    for (std::size_t i = 0; i < q.psnr.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%llu,%.9g,%.6f\n", meth.name.c_str(), meth.steps, i,
                    static_cast<unsigned long long>(val.seeds[i]), q.mse[i], q.psnr[i]);
      csv += buf;
    }
    for (std::size_t i = 0; i < dumps; ++i) {
      write_pnm(dir.claim("eval/val_" + std::to_string(i) + "_" + meth.name + "_n" + std::to_string(meth.steps) + ext),
                from_model_batch(out, i));
    }
    const std::string k = "eval." + meth.name + ".n" + std::to_string(meth.steps) + ".";
    m.set(k + "psnr", q.mean_psnr);
    m.set(k + "psnr_std", q.std_psnr);
    m.set(k + "schedule", TimestepSchedule{meth.timesteps, ""}.csv());
  }
  m.set("eval.images", static_cast<std::uint64_t>(val.seeds.size()));
  m.set("eval.sampler_calls", calls);
  dir.write_text("eval.csv", csv);
  dir.write_manifest("evaluate", m);
  return m;
}

inline const std::vector<std::string>& phase_names() {
  static const std::vector<std::string> names = {"data",     "train",       "depth_search", "finetune", "ts_search",
                                                 "multi_depth", "profile", "sample",       "evaluate"};
  return names;
}

/// Consolidates phase manifests into manifest.txt, report.csv and summary.txt.
inline Manifest report_phase(const RunConfig& cfg, const RunDir& dir) {
  Manifest all;
  all.set("build_id", kBuildId);
  std::vector<std::string> present;
  for (const auto& p : phase_names()) {
    if (!dir.exists(p + ".manifest")) continue;
    present.push_back(p);
    Manifest pm = dir.read_manifest(p);
    for (const auto& [k, v] : pm.entries()) {
      if (k.starts_with("config.") || k == "build_id") continue;
      all.set(k, v);
    }
  }
  if (present.empty()) throw std::runtime_error(dir.root().string() + " contains no phase manifests");
  for (const auto& [k, v] : cfg.entries()) all.set("config." + k, v);
  std::string phases;
  for (const auto& p : present) phases += (phases.empty() ? "" : ",") + p;
  all.set("report.phases", phases);

  const std::string tsk = "ts.w" + guidance_tag(cfg.ts_guidance.front()) + ".";
  std::string csv = "steps,method,psnr,search_sampler_calls\n";
  std::string summary = "steps  method            psnr_db  search_calls\n";
  char buf[160];
  for (std::size_t n : cfg.eval_steps) {
    for (const char* meth : {"uniform", "optimized", "pruned_uniform"}) {
      const std::string k = std::string("eval.") + meth + ".n" + std::to_string(n) + ".psnr";
      if (!all.contains(k)) continue;
      const std::uint64_t cost =
          std::string(meth) == "optimized" && all.contains(tsk + "sampler_calls")
              ? static_cast<std::uint64_t>(all.number(tsk + "sampler_calls"))
              : 0;
      std::snprintf(buf, sizeof buf, "%zu,%s,%.4f,%llu\n", n, meth, all.number(k),
                    static_cast<unsigned long long>(cost));
      csv += buf;
      std::snprintf(buf, sizeof buf, "%5zu  %-16s  %7.2f  %12llu\n", n, meth, all.number(k),
                    static_cast<unsigned long long>(cost));
      summary += buf;
    }
  }
  if (all.contains("depth.d_star")) {
    summary += "depth-skip d* = " + all.at("depth.d_star") + " of " + all.at("depth.d_max") +
               ", parameter fraction " + all.at("depth.param_fraction") + "\n";
  }
  if (all.contains(tsk + "gamma")) summary += "gamma* = " + all.at(tsk + "gamma") + "\n";
  dir.write_text("report.csv", csv);
  dir.write_text("summary.txt", summary);
  dir.write_text("manifest.txt", all.text());
  return all;
}

/// gen-data, train, depth-search, finetune, ts-search, evaluate, report.
inline Manifest run_pipeline(const RunConfig& cfg, const RunDir& dir, const LogFn& log = stderr_log()) {
  gen_data_phase(cfg, dir);
  train_phase(cfg, dir, log);
  depth_search_phase(cfg, dir);
  finetune_phase(cfg, dir, std::nullopt, log);
  ts_search_phase(cfg, dir);
  evaluate_phase(cfg, dir);
  return report_phase(cfg, dir);
}

}  // namespace skipstep
