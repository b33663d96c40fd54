// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: flat `key = value` text, `#` starts a comment. Every
// key has a default; unknown keys are rejected. `profile` is applied before
// any other key regardless of where it appears.

#pragma once

#include <skipstep/gamma_schedule.hpp>
#include <skipstep/rng.hpp>
#include <skipstep/search.hpp>
#include <skipstep/tasks.hpp>
#include <skipstep/train.hpp>
#include <skipstep/unet.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skipstep {

/// Bad configuration text or value; the CLI maps it to a usage error.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Seeds {
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t search = 0;
  std::uint64_t sample = 0;

  static Seeds from_master(std::uint64_t s) {
    return {Rng::derive(s, "init"), Rng::derive(s, "train"), Rng::derive(s, "search"), Rng::derive(s, "sample")};
  }
};

struct RunConfig {
  std::string profile = "default";
  TaskKind task = TaskKind::Restore;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t base_channels = 8;
  std::vector<std::size_t> channel_mults{1, 2, 4, 8};
  std::size_t blocks_per_level = 2;
  std::size_t time_embed_dim = 32;
  std::size_t timesteps = 1000;

  DatasetSplit split{4096, 256};
  TrainConfig train{.seed = Rng::derive(0, "train")};
  FinetuneConfig finetune{};

  std::uint64_t seed = 0;
  Seeds seeds = Seeds::from_master(0);

  // time-step search
  std::size_t ts_n = 5;
  std::size_t ts_N = 50;
  double ts_eta_step = 0.05;
  double ts_eps_probe = 0.1;
  std::size_t ts_batch = 64;
  DirectionMode ts_direction = DirectionMode::Reference;
  bool ts_refine = false;
  double ts_alpha_fraction = kDefaultAlphaFraction;
  std::vector<double> ts_guidance{1.0};
  double eta_ddim = 0.0;

  // depth search
  double depth_threshold = 28.0;
  std::size_t depth_batch = 64;
  std::size_t depth_N = 50;

  // multi-depth analysis
  std::vector<std::size_t> multi_depths{6, 7, 8};
  std::size_t multi_n = 6;
  std::size_t multi_group = 2;

  // evaluation
  std::vector<std::size_t> eval_steps{5, 10};
  std::size_t eval_reference_steps = 50;
  std::size_t eval_dump_images = 8;

  UNetConfig unet() const {
    UNetConfig c;
    c.image_size = image_size;
    c.in_channels = channels;
    c.cond_channels = condition_channels(task, channels);
    c.out_channels = channels;
    c.base_channels = base_channels;
    c.channel_mults = channel_mults;
    c.blocks_per_level = blocks_per_level;
    c.time_embed_dim = time_embed_dim;
    c.timesteps = timesteps;
    return c;
  }

  DataSpec data() const { return {task, image_size, channels}; }
  int t_max() const { return static_cast<int>(timesteps) - 1; }
  double alpha() const { return ts_alpha_fraction * static_cast<double>(timesteps); }

  TsSearchConfig ts_config(double guidance) const {
    TsSearchConfig c;
    c.n = ts_n;
    c.N = ts_N;
    c.eta_step = ts_eta_step;
    c.eps_probe = ts_eps_probe;
    c.batch = ts_batch;
    c.direction_mode = ts_direction;
    c.refine = ts_refine;
    c.alpha = alpha();
    c.t_max = t_max();
    c.guidance = guidance;
    c.eta_ddim = eta_ddim;
    return c;
  }

  void set_master_seed(std::uint64_t s) {
    seed = s;
    seeds = Seeds::from_master(s);
    train.seed = seeds.train;
  }

  void apply_profile(const std::string& name) {
    if (name == "fast") {
      image_size = 16;
      channels = 1;
    } else if (name == "default") {
      image_size = 32;
      channels = 3;
    } else {
      throw config_error("unknown profile '" + name + "' (expected fast or default)");
    }
    profile = name;
  }

  void validate() const {
    try {
      unet().validate();
      split.validate();
      ts_config(ts_guidance.empty() ? 1.0 : ts_guidance.front()).validate();
    } catch (const config_error&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    if (train.batch == 0) throw config_error("train.batch must be positive");
    if (!(train.lr > 0.0)) throw config_error("train.lr must be positive");
    if (!(train.grad_clip >= 0.0)) throw config_error("train.grad_clip must be >= 0");
    if (ts_guidance.empty()) throw config_error("ts.guidance needs at least one value");
    if (depth_batch == 0 || depth_N == 0) throw config_error("depth.batch and depth.N must be positive");
    if (eval_steps.empty()) throw config_error("eval.steps needs at least one value");
    if (image_size % kRestoreFactor != 0) throw config_error("image_size must be divisible by 4");
  }

  /// Every key with its current value, sorted by key.
  std::map<std::string, std::string> entries() const;
  void set(const std::string& key, const std::string& value);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw config_error(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error(key + ": expected true or false, got '" + v + "'");
}

inline std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += f(xs[i]);
  }
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

inline const std::map<std::string, Field>& fields() {
  using C = RunConfig;
  const auto sz = [](std::size_t C::*m) {
    return Field{[m](const C& c) { return std::to_string(c.*m); },
                 [m](C& c, const std::string& k, const std::string& v) { c.*m = parse_u64(k, v); }};
  };
  const auto dbl = [](double C::*m) {
    return Field{[m](const C& c) { return fmt_double(c.*m); },
                 [m](C& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); }};
  };
  const auto sizes = [](std::vector<std::size_t> C::*m) {
    return Field{[m](const C& c) { return join(c.*m, [](std::size_t x) { return std::to_string(x); }); },
                 [m](C& c, const std::string& k, const std::string& v) {
                   std::vector<std::size_t> out;
                   for (const auto& s : split_list(v)) out.push_back(parse_u64(k, s));
                   if (out.empty()) throw config_error(k + ": empty list");
                   c.*m = out;
                 }};
  };
  const auto seed_field = [](std::uint64_t Seeds::*m) {
    return Field{[m](const C& c) { return std::to_string(c.seeds.*m); },
                 [m](C& c, const std::string& k, const std::string& v) {
                   c.seeds.*m = parse_u64(k, v);
                   c.train.seed = c.seeds.train;
                 }};
  };
  static const std::map<std::string, Field> table = {
      {"profile", {[](const C& c) { return c.profile; }, [](C& c, const std::string&, const std::string& v) {
                     c.apply_profile(v);
                   }}},
      {"task", {[](const C& c) { return std::string(task_name(c.task)); },
                [](C& c, const std::string&, const std::string& v) {
                  try {
                    c.task = parse_task(v);
                  } catch (const std::invalid_argument& e) {
                    throw config_error(std::string("task: ") + e.what());
                  }
                }}},
      {"unet.image_size", sz(&C::image_size)},
      {"unet.channels", sz(&C::channels)},
      {"unet.base_channels", sz(&C::base_channels)},
      {"unet.channel_mults", sizes(&C::channel_mults)},
      {"unet.blocks_per_level", sz(&C::blocks_per_level)},
      {"unet.time_embed_dim", sz(&C::time_embed_dim)},
      {"diffusion.timesteps", sz(&C::timesteps)},
      {"data.train_count", {[](const C& c) { return std::to_string(c.split.train_count); },
                            [](C& c, const std::string& k, const std::string& v) {
                              c.split.train_count = parse_u64(k, v);
                            }}},
      {"data.val_count", {[](const C& c) { return std::to_string(c.split.val_count); },
                          [](C& c, const std::string& k, const std::string& v) { c.split.val_count = parse_u64(k, v); }}},
      {"train.steps", {[](const C& c) { return std::to_string(c.train.steps); },
                       [](C& c, const std::string& k, const std::string& v) { c.train.steps = parse_u64(k, v); }}},
      {"train.batch", {[](const C& c) { return std::to_string(c.train.batch); },
                       [](C& c, const std::string& k, const std::string& v) { c.train.batch = parse_u64(k, v); }}},
      {"train.lr", {[](const C& c) { return fmt_double(c.train.lr); },
                    [](C& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); }}},
      {"train.p_drop", {[](const C& c) { return fmt_double(c.train.p_drop); },
                        [](C& c, const std::string& k, const std::string& v) { c.train.p_drop = parse_double(k, v); }}},
      {"train.grad_clip", {[](const C& c) { return fmt_double(c.train.grad_clip); },
                           [](C& c, const std::string& k, const std::string& v) {
                             c.train.grad_clip = parse_double(k, v);
                           }}},
      {"train.warmup_steps", {[](const C& c) { return std::to_string(c.train.warmup_steps); },
                              [](C& c, const std::string& k, const std::string& v) {
                                c.train.warmup_steps = parse_u64(k, v);
                              }}},
      {"train.log_every", {[](const C& c) { return std::to_string(c.train.log_every); },
                           [](C& c, const std::string& k, const std::string& v) {
                             c.train.log_every = parse_u64(k, v);
                           }}},
      {"finetune.lr_scale", {[](const C& c) { return fmt_double(c.finetune.lr_scale); },
                             [](C& c, const std::string& k, const std::string& v) {
                               c.finetune.lr_scale = parse_double(k, v);
                             }}},
      {"finetune.step_fraction", {[](const C& c) { return fmt_double(c.finetune.step_fraction); },
                                  [](C& c, const std::string& k, const std::string& v) {
                                    c.finetune.step_fraction = parse_double(k, v);
                                  }}},
      {"seed", {[](const C& c) { return std::to_string(c.seed); },
                [](C& c, const std::string& k, const std::string& v) { c.set_master_seed(parse_u64(k, v)); }}},
      {"seed.init", seed_field(&Seeds::init)},
      {"seed.train", seed_field(&Seeds::train)},
      {"seed.search", seed_field(&Seeds::search)},
      {"seed.sample", seed_field(&Seeds::sample)},
      {"ts.n", sz(&C::ts_n)},
      {"ts.N", sz(&C::ts_N)},
      {"ts.eta_step", dbl(&C::ts_eta_step)},
      {"ts.eps_probe", dbl(&C::ts_eps_probe)},
      {"ts.batch", sz(&C::ts_batch)},
      {"ts.direction", {[](const C& c) {
                          return std::string(c.ts_direction == DirectionMode::Reference ? "reference"
                                                                                         : "uniform-literal");
                        },
                        [](C& c, const std::string& k, const std::string& v) {
                          if (v == "reference") {
                            c.ts_direction = DirectionMode::Reference;
                          } else if (v == "uniform-literal") {
                            c.ts_direction = DirectionMode::UniformLiteral;
                          } else {
                            throw config_error(k + ": expected reference or uniform-literal, got '" + v + "'");
                          }
                        }}},
      {"ts.refine", {[](const C& c) { return std::string(c.ts_refine ? "true" : "false"); },
                     [](C& c, const std::string& k, const std::string& v) { c.ts_refine = parse_bool(k, v); }}},
      {"ts.alpha_fraction", dbl(&C::ts_alpha_fraction)},
      {"ts.guidance", {[](const C& c) { return join(c.ts_guidance, fmt_double); },
                       [](C& c, const std::string& k, const std::string& v) {
                         std::vector<double> out;
                         for (const auto& s : split_list(v)) out.push_back(parse_double(k, s));
                         if (out.empty()) throw config_error(k + ": empty list");
                         c.ts_guidance = out;
                       }}},
      {"sampler.eta", dbl(&C::eta_ddim)},
      {"depth.threshold", dbl(&C::depth_threshold)},
      {"depth.batch", sz(&C::depth_batch)},
      {"depth.N", sz(&C::depth_N)},
      {"multi.depths", sizes(&C::multi_depths)},
      {"multi.n", sz(&C::multi_n)},
      {"multi.group", sz(&C::multi_group)},
      {"eval.steps", sizes(&C::eval_steps)},
      {"eval.reference_steps", sz(&C::eval_reference_steps)},
      {"eval.dump_images", sz(&C::eval_dump_images)},
  };
  return table;
}

}  // namespace detail

inline std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : detail::fields()) out[k] = f.get(*this);
  return out;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = detail::fields();
  const auto it = table.find(key);
  if (it == table.end()) throw config_error("unknown configuration key '" + key + "'");
  it->second.set(*this, key, value);
}

/// Parses `key = value` lines. Returns them in file order; throws on syntax
/// errors with the line number.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw config_error(source + ":" + std::to_string(no) + ": expected 'key = value', got '" + line + "'");
    }
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw config_error(source + ":" + std::to_string(no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Applies assignments with `profile` first, then the rest in order.
inline void apply_assignments(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "profile") cfg.set(k, v);
  }
  for (const auto& [k, v] : kv) {
    if (k != "profile") cfg.set(k, v);
  }
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto kv = parse_config_text(ss.str(), path.string());
  kv.insert(kv.end(), overrides.begin(), overrides.end());
  RunConfig cfg;
  apply_assignments(cfg, kv);
  cfg.validate();
  return cfg;
}

inline std::string config_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : cfg.entries()) s += k + " = " + v + "\n";
  return s;
}

}  // namespace skipstep
