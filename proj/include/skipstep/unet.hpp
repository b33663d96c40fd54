// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Conditional U-Net noise predictor with indexed skip-connection depth levels.
//
// Depth levels run 1..d_max from shallow to deep. Encoder block d produces
// skip tensor d; decoder block d consumes it. Level d_max owns the middle
// block. With active depth d < d_max the middle block and every encoder and
// decoder block deeper than d are bypassed: decoder block d receives the
// level-d skip tensor repeated along channels in place of the deeper
// features, which adds no parameters.
//
// Parameter names (the checkpoint contract):
//   time.fc1.{weight,bias}  time.fc2.{weight,bias}        depth 1
//   in.conv.{weight,bias}   out.conv.{weight,bias}        depth 1
//   enc.L<l>.B<b>.<part>.{weight,bias}                    depth (l-1)*blocks_per_level + b
//   dec.L<l>.B<b>.<part>.{weight,bias}                    same depth as its encoder mirror
//   mid.<part>.{weight,bias}                              depth d_max
// with <part> in {conv1, temb, conv2, skip}; levels and blocks are 1-based
// and `skip` exists only where the block changes channels or resolution.

#include <skipstep/adam.hpp>
#include <skipstep/ops.hpp>
#include <skipstep/rng.hpp>
#include <skipstep/tensor.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

struct UNetConfig {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::size_t cond_channels = 3;
  std::size_t out_channels = 3;
  std::size_t base_channels = 8;
  std::vector<std::size_t> channel_mults{1, 2, 4, 8};
  std::size_t blocks_per_level = 2;
  std::size_t time_embed_dim = 32;
  /// Number of trained diffusion timesteps; forward accepts t in [0, timesteps).
  std::size_t timesteps = 1000;

  std::size_t levels() const { return channel_mults.size(); }
  std::size_t max_depth() const { return blocks_per_level * levels() + 1; }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (image_size < 2 || (image_size & (image_size - 1)) != 0) v.push_back("image_size must be a power of 2 >= 2");
    if (in_channels == 0) v.push_back("in_channels must be positive");
    if (cond_channels == 0) v.push_back("cond_channels must be positive");
    if (out_channels == 0) v.push_back("out_channels must be positive");
    if (base_channels == 0) v.push_back("base_channels must be positive");
    if (blocks_per_level == 0) v.push_back("blocks_per_level must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) v.push_back("time_embed_dim must be a positive even number");
    if (timesteps < 2) v.push_back("timesteps must be >= 2");
    if (channel_mults.empty()) v.push_back("channel_mults must not be empty");
    for (std::size_t m : channel_mults) {
      if (m == 0) {
        v.push_back("channel_mults entries must be positive");
        break;
      }
    }
    if (image_size >= 2 && (image_size & (image_size - 1)) == 0) {
      const auto log2 = static_cast<std::size_t>(std::countr_zero(image_size));
      if (levels() > log2) {
        v.push_back("number of levels (" + std::to_string(levels()) + ") exceeds log2(image_size) = " +
                    std::to_string(log2));
      }
    }
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid UNetConfig:";
    for (const auto& s : v) msg += " " + s + ";";
    throw std::invalid_argument(msg);
  }

  bool operator==(const UNetConfig&) const = default;
};

enum class BlockKind { Encoder, Middle, Decoder };

/// Static description of one residual block, derived purely from the config.
struct BlockSpec {
  std::string prefix;
  BlockKind kind;
  std::size_t depth;
  std::size_t in_ch;
  std::size_t out_ch;
  std::size_t stride;
  std::size_t out_res;
  /// Decoder only: the incoming deeper features must be upsampled 2x first.
  bool upsample_input = false;
  bool has_skip_proj() const { return in_ch != out_ch || stride != 1; }
};

struct UNetTopology {
  std::vector<BlockSpec> encoder;  // index d-1 for depth d, d in [1, d_max-1]
  BlockSpec middle;
  std::vector<BlockSpec> decoder;  // index d-1 for depth d

  static UNetTopology from(const UNetConfig& cfg) {
    cfg.validate();
    UNetTopology topo;
    const std::size_t bpl = cfg.blocks_per_level;
    std::size_t ch = cfg.base_channels;
    std::vector<std::size_t> enc_ch;
    for (std::size_t l = 0; l < cfg.levels(); ++l) {
      for (std::size_t b = 0; b < bpl; ++b) {
        const std::size_t d = l * bpl + b + 1;
        const std::size_t out = cfg.base_channels * cfg.channel_mults[l];
        const std::size_t stride = (b == 0 && l > 0) ? 2 : 1;
        topo.encoder.push_back(BlockSpec{"enc.L" + std::to_string(l + 1) + ".B" + std::to_string(b + 1),
                                         BlockKind::Encoder, d, ch, out, stride, cfg.image_size >> l});
        enc_ch.push_back(out);
        ch = out;
      }
    }
    const std::size_t dmax = cfg.max_depth();
    topo.middle = BlockSpec{"mid", BlockKind::Middle, dmax, ch, ch, 1, cfg.image_size >> (cfg.levels() - 1)};
    for (std::size_t d = 1; d < dmax; ++d) {
      const BlockSpec& enc = topo.encoder[d - 1];
      const std::size_t prev_ch = (d == dmax - 1) ? topo.middle.out_ch : enc_ch[d];
      BlockSpec dec{"dec" + enc.prefix.substr(3), BlockKind::Decoder, d, prev_ch + enc.out_ch, enc.out_ch, 1,
                    enc.out_res};
      dec.upsample_input = (d < dmax - 1) && topo.encoder[d].stride == 2;
      topo.decoder.push_back(dec);
    }
    return topo;
  }

  /// Channels of the deeper features decoder block d expects ahead of its skip input.
  std::size_t decoder_prev_channels(std::size_t d) const { return decoder[d - 1].in_ch - encoder[d - 1].out_ch; }
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t depth;
  std::size_t fan_in;  // 0 marks zero initialization
};

/// Every parameter name with its shape and owning depth, in table order.
inline std::vector<ParamSpec> parameter_specs(const UNetConfig& cfg) {
  const UNetTopology topo = UNetTopology::from(cfg);
  const std::size_t E = cfg.time_embed_dim;
  std::vector<ParamSpec> specs;
  auto add = [&](std::string name, Shape shape, std::size_t depth, std::size_t fan_in) {
    specs.push_back(ParamSpec{std::move(name), std::move(shape), depth, fan_in});
  };
  add("time.fc1.weight", {E, E}, 1, E);
  add("time.fc1.bias", {E}, 1, E);
  add("time.fc2.weight", {E, E}, 1, E);
  add("time.fc2.bias", {E}, 1, E);
  add("in.conv.weight", {cfg.base_channels, cfg.in_channels + cfg.cond_channels, 3, 3}, 1,
      (cfg.in_channels + cfg.cond_channels) * 9);
  add("in.conv.bias", {cfg.base_channels}, 1, (cfg.in_channels + cfg.cond_channels) * 9);
  auto add_block = [&](const BlockSpec& b) {
    add(b.prefix + ".conv1.weight", {b.out_ch, b.in_ch, 3, 3}, b.depth, b.in_ch * 9);
    add(b.prefix + ".conv1.bias", {b.out_ch}, b.depth, b.in_ch * 9);
    add(b.prefix + ".temb.weight", {b.out_ch, E}, b.depth, E);
    add(b.prefix + ".temb.bias", {b.out_ch}, b.depth, E);
    add(b.prefix + ".conv2.weight", {b.out_ch, b.out_ch, 3, 3}, b.depth, b.out_ch * 9);
    add(b.prefix + ".conv2.bias", {b.out_ch}, b.depth, b.out_ch * 9);
    if (b.has_skip_proj()) {
      add(b.prefix + ".skip.weight", {b.out_ch, b.in_ch, 1, 1}, b.depth, b.in_ch);
      add(b.prefix + ".skip.bias", {b.out_ch}, b.depth, b.in_ch);
    }
  };
  for (const auto& b : topo.encoder) add_block(b);
  add_block(topo.middle);
  for (auto it = topo.decoder.rbegin(); it != topo.decoder.rend(); ++it) add_block(*it);
  add("out.conv.weight", {cfg.out_channels, cfg.base_channels, 3, 3}, 1, 0);
  add("out.conv.bias", {cfg.out_channels}, 1, 0);
  return specs;
}

/// Sinusoidal features of integer timesteps, shape (N, dim).
template <class Real>
Tensor<Real> timestep_features(std::span<const int> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<Real> out({t.size(), dim});
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[n]) * freq;
      out[n * dim + i] = static_cast<Real>(std::sin(arg));
      out[n * dim + half + i] = static_cast<Real>(std::cos(arg));
    }
  }
  return out;
}

template <class Real>
class DenoiserModel {
 public:
  /// Deterministic initialization: each parameter draws from its own stream
  /// derived from (seed, name), fan-in-scaled uniform for weights, zero
  /// biases, zero output convolution.
  static DenoiserModel build(const UNetConfig& cfg, std::uint64_t seed) {
    DenoiserModel m(cfg);
    for (const ParamSpec& spec : m.specs_) {
      std::vector<Real> values(shape_numel(spec.shape), Real(0));
      const bool is_bias = spec.name.ends_with(".bias");
      if (spec.fan_in != 0 && !is_bias) {
        Rng rng(Rng::derive(seed, spec.name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (Real& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
      }
      m.params_.push_back({spec.name, Tensor<Real>(spec.shape, std::move(values))});
    }
    return m;
  }

  /// Model with the given parameter values, validated against the config's name table.
  static DenoiserModel from_params(const UNetConfig& cfg, std::vector<NamedTensor<Real>> params) {
    DenoiserModel m(cfg);
    if (params.size() != m.specs_.size()) {
      throw std::invalid_argument("parameter table has " + std::to_string(params.size()) + " entries, config expects " +
                                  std::to_string(m.specs_.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name != m.specs_[i].name || params[i].tensor.shape() != m.specs_[i].shape) {
        throw std::invalid_argument("parameter " + std::to_string(i) + " is '" + params[i].name + "' " +
                                    shape_str(params[i].tensor.shape()) + ", expected '" + m.specs_[i].name + "' " +
                                    shape_str(m.specs_[i].shape));
      }
    }
    m.params_ = std::move(params);
    return m;
  }

  DenoiserModel(DenoiserModel&&) noexcept = default;
  DenoiserModel& operator=(DenoiserModel&&) noexcept = default;
  DenoiserModel(const DenoiserModel&) = delete;
  DenoiserModel& operator=(const DenoiserModel&) = delete;

  /// Deep copy: the clone shares no storage with this model.
  DenoiserModel clone() const {
    DenoiserModel m(cfg_);
    m.active_depth_ = active_depth_;
    for (const auto& p : params_) m.params_.push_back({p.name, p.tensor.clone()});
    return m;
  }

  template <class Other>
  DenoiserModel<Other> cast() const {
    std::vector<NamedTensor<Other>> out;
    for (const auto& p : params_) out.push_back({p.name, p.tensor.template cast<Other>()});
    auto m = DenoiserModel<Other>::from_params(cfg_, std::move(out));
    m.set_active_depth(active_depth_);
    return m;
  }

  const UNetConfig& config() const { return cfg_; }
  const UNetTopology& topology() const { return topo_; }
  std::size_t max_depth() const { return cfg_.max_depth(); }
  std::size_t active_depth() const { return active_depth_; }
  void set_active_depth(std::size_t d) {
    if (d < 1 || d > max_depth()) {
      throw std::out_of_range("active depth " + std::to_string(d) + " outside [1, " + std::to_string(max_depth()) + "]");
    }
    active_depth_ = d;
  }

  std::vector<NamedTensor<Real>>& params() { return params_; }
  const std::vector<NamedTensor<Real>>& params() const { return params_; }
  const std::vector<ParamSpec>& param_specs() const { return specs_; }

  const Tensor<Real>& param(std::string_view name) const { return params_.at(index_of(name)).tensor; }
  Tensor<Real>& param(std::string_view name) { return params_.at(index_of(name)).tensor; }

  std::size_t depth_of(std::string_view name) const { return specs_.at(index_of(name)).depth; }

  /// Parameters owned by depth levels <= d (the pruned model at depth d).
  std::vector<NamedTensor<Real>> params_up_to_depth(std::size_t d) const {
    std::vector<NamedTensor<Real>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (specs_[i].depth <= d) out.push_back(params_[i]);
    }
    return out;
  }

  std::size_t parameter_count() const { return parameter_count_at_depth(max_depth()); }
  std::size_t parameter_count_at_depth(std::size_t d) const {
    std::size_t n = 0;
    for (const auto& s : specs_) {
      if (s.depth <= d) n += shape_numel(s.shape);
    }
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& p : params_) p.tensor.set_requires_grad(on);
  }

  /// When set, every parameter read by forward() is appended to the log.
  void set_access_log(std::vector<std::string>* log) const { access_log_ = log; }

  /// Noise prediction for x_t (N, in, S, S) under condition c (N, cond, S, S)
  /// at per-sample timesteps t. Honors the active depth.
  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& cond, std::span<const int> t) const {
    return forward_at_depth(x, cond, t, active_depth_);
  }

  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& cond, int t) const {
    std::vector<int> ts(x.dim(0), t);
    return forward(x, cond, ts);
  }

  /// forward() with an explicit depth instead of the active one.
  Tensor<Real> forward_at_depth(const Tensor<Real>& x, const Tensor<Real>& cond, std::span<const int> t,
                                std::size_t depth) const {
    if (depth < 1 || depth > max_depth()) {
      throw std::out_of_range("depth " + std::to_string(depth) + " outside [1, " + std::to_string(max_depth()) + "]");
    }
    const std::size_t S = cfg_.image_size;
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != S || x.dim(3) != S) {
      throw shape_error("forward: x_t shape " + shape_str(x.shape()) + " does not match (N, " +
                        std::to_string(cfg_.in_channels) + ", " + std::to_string(S) + ", " + std::to_string(S) + ")");
    }
    if (cond.rank() != 4 || cond.dim(0) != x.dim(0) || cond.dim(1) != cfg_.cond_channels || cond.dim(2) != S ||
        cond.dim(3) != S) {
      throw shape_error("forward: condition shape " + shape_str(cond.shape()) + " does not match (" +
                        std::to_string(x.dim(0)) + ", " + std::to_string(cfg_.cond_channels) + ", " +
                        std::to_string(S) + ", " + std::to_string(S) + ")");
    }
    if (t.size() != x.dim(0)) {
      throw std::invalid_argument("forward: " + std::to_string(t.size()) + " timesteps for batch of " +
                                  std::to_string(x.dim(0)));
    }
    for (int ti : t) {
      if (ti < 0 || static_cast<std::size_t>(ti) >= cfg_.timesteps) {
        throw std::out_of_range("forward: timestep " + std::to_string(ti) + " outside [0, " +
                                std::to_string(cfg_.timesteps) + ")");
      }
    }
    using namespace ops;
    const std::size_t d = depth;
    const std::size_t dmax = max_depth();

    Tensor<Real> temb = timestep_features<Real>(t, cfg_.time_embed_dim);
    temb = silu(affine(temb, use("time.fc1.weight"), use("time.fc1.bias")));
    temb = silu(affine(temb, use("time.fc2.weight"), use("time.fc2.bias")));

    Tensor<Real> h = conv2d(concat_channels(x, cond), use("in.conv.weight"), use("in.conv.bias"));
    std::vector<Tensor<Real>> skips;
    const std::size_t enc_depth = std::min(d, dmax - 1);
    for (std::size_t k = 1; k <= enc_depth; ++k) {
      h = block(topo_.encoder[k - 1], h, temb);
      skips.push_back(h);
    }
    if (d == dmax) {
      h = block(topo_.middle, h, temb);
    } else {
      h = repeat_channels(skips[d - 1], topo_.decoder_prev_channels(d));
    }
    for (std::size_t k = enc_depth; k >= 1; --k) {
      const BlockSpec& spec = topo_.decoder[k - 1];
      if (k < d && spec.upsample_input) h = upsample2x(h);
      h = block(spec, concat_channels(h, skips[k - 1]), temb);
    }
    return conv2d(silu(h), use("out.conv.weight"), use("out.conv.bias"));
  }

 private:
  explicit DenoiserModel(const UNetConfig& cfg)
      : cfg_(cfg), topo_(UNetTopology::from(cfg)), specs_(parameter_specs(cfg)) {
    active_depth_ = cfg_.max_depth();
    for (std::size_t i = 0; i < specs_.size(); ++i) index_.emplace(specs_[i].name, i);
  }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  const Tensor<Real>& use(const std::string& name) const {
    if (access_log_ != nullptr) access_log_->push_back(name);
    return params_[index_of(name)].tensor;
  }

  Tensor<Real> block(const BlockSpec& b, const Tensor<Real>& x, const Tensor<Real>& temb) const {
    using namespace ops;
    const std::string& p = b.prefix;
    Tensor<Real> h = conv2d(x, use(p + ".conv1.weight"), use(p + ".conv1.bias"), b.stride);
    h = add_channel_bias(h, affine(temb, use(p + ".temb.weight"), use(p + ".temb.bias")));
    h = conv2d(silu(h), use(p + ".conv2.weight"), use(p + ".conv2.bias"));
    Tensor<Real> shortcut = b.has_skip_proj() ? conv2d(x, use(p + ".skip.weight"), use(p + ".skip.bias"), b.stride) : x;
    return add(shortcut, h);
  }

  UNetConfig cfg_;
  UNetTopology topo_;
  std::vector<ParamSpec> specs_;
  std::map<std::string, std::size_t> index_;
  std::vector<NamedTensor<Real>> params_;
  std::size_t active_depth_ = 1;
  mutable std::vector<std::string>* access_log_ = nullptr;
};

struct DepthLevelProfile {
  std::size_t depth = 0;
  std::size_t params = 0;
  double cumulative_param_fraction = 0.0;
  std::uint64_t macs = 0;
  double cumulative_mac_fraction = 0.0;
};

/// Parameter and multiply-accumulate counts attributable to each depth level.
struct DepthProfile {
  std::vector<DepthLevelProfile> levels;
  std::size_t total_params = 0;
  std::uint64_t total_macs = 0;

  static constexpr const char* kCsvHeader =
      "depth,params,param_fraction,cumulative_param_fraction,macs,mac_fraction,cumulative_mac_fraction";

  std::string csv() const {
    std::string s = std::string(kCsvHeader) + "\n";
    char buf[256];
    for (const auto& l : levels) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.12f,%.12f,%llu,%.12f,%.12f\n", l.depth, l.params,
                    static_cast<double>(l.params) / static_cast<double>(total_params), l.cumulative_param_fraction,
                    static_cast<unsigned long long>(l.macs),
                    static_cast<double>(l.macs) / static_cast<double>(total_macs), l.cumulative_mac_fraction);
      s += buf;
    }
    return s;
  }
};

/// Analytic per-image MAC count of each depth level (convolutions and affine maps).
inline std::vector<std::uint64_t> macs_per_depth(const UNetConfig& cfg) {
  const UNetTopology topo = UNetTopology::from(cfg);
  const std::size_t E = cfg.time_embed_dim;
  std::vector<std::uint64_t> macs(cfg.max_depth() + 1, 0);
  const std::uint64_t S2 = cfg.image_size * cfg.image_size;
  macs[1] += 2 * E * E;
  macs[1] += S2 * cfg.base_channels * (cfg.in_channels + cfg.cond_channels) * 9;
  macs[1] += S2 * cfg.out_channels * cfg.base_channels * 9;
  auto block_macs = [&](const BlockSpec& b) {
    const std::uint64_t P = b.out_res * b.out_res;
    std::uint64_t m = P * b.out_ch * b.in_ch * 9 + E * b.out_ch + P * b.out_ch * b.out_ch * 9;
    if (b.has_skip_proj()) m += P * b.out_ch * b.in_ch;
    macs[b.depth] += m;
  };
  for (const auto& b : topo.encoder) block_macs(b);
  block_macs(topo.middle);
  for (const auto& b : topo.decoder) block_macs(b);
  return macs;
}

/// Per-image MACs of one forward pass at the given active depth.
inline std::uint64_t forward_macs(const UNetConfig& cfg, std::size_t depth) {
  const auto m = macs_per_depth(cfg);
  std::uint64_t s = 0;
  for (std::size_t d = 1; d <= depth && d < m.size(); ++d) s += m[d];
  return s;
}

inline DepthProfile depth_profile(const UNetConfig& cfg) {
  const auto specs = parameter_specs(cfg);
  const auto macs = macs_per_depth(cfg);
  DepthProfile prof;
  prof.levels.resize(cfg.max_depth());
  for (std::size_t d = 1; d <= cfg.max_depth(); ++d) {
    prof.levels[d - 1].depth = d;
    prof.levels[d - 1].macs = macs[d];
    prof.total_macs += macs[d];
  }
  for (const auto& s : specs) {
    prof.levels[s.depth - 1].params += shape_numel(s.shape);
    prof.total_params += shape_numel(s.shape);
  }
  std::size_t cp = 0;
  std::uint64_t cm = 0;
  for (auto& l : prof.levels) {
    cp += l.params;
    cm += l.macs;
    l.cumulative_param_fraction = static_cast<double>(cp) / static_cast<double>(prof.total_params);
    l.cumulative_mac_fraction = static_cast<double>(cm) / static_cast<double>(prof.total_macs);
  }
  return prof;
}

template <class Real>
DepthProfile depth_profile(const DenoiserModel<Real>& model) {
  return depth_profile(model.config());
}

}  // namespace skipstep
