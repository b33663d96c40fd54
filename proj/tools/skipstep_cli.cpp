// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Every subcommand takes a config file, optional
// --set key=value overrides, and a run directory given by --out.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <skipstep/pipeline.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("config", a.config, "Run configuration file")->required();
  sub->add_option("--set", a.sets, "Override a configuration key (key=value)");
  sub->add_option("--out", a.out, "Run directory")->required();
  sub->add_option("--seed", a.seed, "Master seed; replaces every seed field");
  sub->add_flag("--force", a.force, "Overwrite existing outputs");
}

skipstep::RunConfig resolve_config(const CommonArgs& a) {
  if (!std::filesystem::is_regular_file(a.config)) {
    throw skipstep::config_error("config file not found: " + a.config);
  }
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw skipstep::config_error("--set expects key=value, got '" + s + "'");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  skipstep::RunConfig cfg = skipstep::load_config(a.config, overrides);
  if (a.seed) cfg.set_master_seed(*a.seed);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-skip pruning and gamma time-step search on a toy conditional diffusion model"};
  app.require_subcommand(1);

  CommonArgs args;
  std::optional<std::size_t> ft_depth;
  bool ts_pruned = false;
  skipstep::SampleOptions sample_opt;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Write dataset seed lists and example pairs"},
      {"train", "Train the denoiser"},
      {"finetune", "Fine-tune the depth-skipped model"},
      {"sample", "Sample validation images"},
      {"ts-search", "Gamma time-step search"},
      {"depth-search", "Depth-skip search"},
      {"multi-depth", "Exhaustive per-step depth analysis"},
      {"profile", "Per-depth parameter and MAC profile"},
      {"evaluate", "Validation PSNR against the reference sampler"},
      {"report", "Consolidate phase manifests"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, args);
    subs[name] = sub;
  }
  subs["finetune"]->add_option("--depth", ft_depth, "Depth to fine-tune (default: depth-search result)");
  subs["ts-search"]->add_flag("--pruned", ts_pruned, "Search on pruned.ckpt instead of model.ckpt");
  subs["sample"]->add_option("--steps", sample_opt.steps, "Number of sampling steps");
  subs["sample"]->add_option("--gamma", sample_opt.gamma, "Gamma of the time-step schedule");
  subs["sample"]->add_option("--depth", sample_opt.depth, "Active depth (0 = full model)");
  subs["sample"]->add_option("--count", sample_opt.count, "Number of validation images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  std::string which;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) which = name;
  }

  try {
    const skipstep::RunConfig cfg = resolve_config(args);
    const skipstep::RunDir dir(args.out, args.force);
    skipstep::Manifest m;
    if (which == "gen-data") {
      m = skipstep::gen_data_phase(cfg, dir);
    } else if (which == "train") {
      m = skipstep::train_phase(cfg, dir);
    } else if (which == "finetune") {
      m = skipstep::finetune_phase(cfg, dir, ft_depth);
    } else if (which == "sample") {
      m = skipstep::sample_phase(cfg, dir, sample_opt);
    } else if (which == "ts-search") {
      m = skipstep::ts_search_phase(cfg, dir, ts_pruned);
    } else if (which == "depth-search") {
      m = skipstep::depth_search_phase(cfg, dir);
    } else if (which == "multi-depth") {
      m = skipstep::multi_depth_phase(cfg, dir);
    } else if (which == "profile") {
      m = skipstep::profile_phase(cfg, dir);
    } else if (which == "evaluate") {
      m = skipstep::evaluate_phase(cfg, dir);
    } else if (which == "report") {
      m = skipstep::report_phase(cfg, dir);
      std::ifstream summary(dir.path("summary.txt"));
      std::cout << summary.rdbuf();
      return 0;
    }
    for (const auto& [k, v] : m.entries()) {
      if (!k.starts_with("config.")) std::cout << k << " = " << v << '\n';
    }
  } catch (const skipstep::config_error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
