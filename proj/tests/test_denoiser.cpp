// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#include <skipstep/grad_check.hpp>
#include <skipstep/unet.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace ss = skipstep;

namespace {

ss::UNetConfig fast_config() {
  ss::UNetConfig c;
  c.image_size = 16;
  c.in_channels = 1;
  c.cond_channels = 1;
  c.out_channels = 1;
  return c;
}

ss::UNetConfig tiny_config() {
  ss::UNetConfig c;
  c.image_size = 8;
  c.in_channels = 1;
  c.cond_channels = 1;
  c.out_channels = 1;
  c.base_channels = 2;
  c.channel_mults = {1, 2};
  c.blocks_per_level = 1;
  c.time_embed_dim = 4;
  return c;
}

template <class Real>
ss::Tensor<Real> noise(ss::Shape shape, std::uint64_t seed) {
  ss::Rng rng(seed);
  ss::Tensor<Real> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(rng.normal());
  return t;
}

// Counts parameters straight from the documented naming scheme.
std::size_t count_parameters(const ss::UNetConfig& c) {
  const std::size_t E = c.time_embed_dim;
  const auto block = [&](std::size_t in, std::size_t out, bool proj) {
    std::size_t n = out * in * 9 + out + out * E + out + out * out * 9 + out;
    if (proj) n += out * in + out;
    return n;
  };
  std::size_t total = 2 * (E * E + E);
  total += c.base_channels * (c.in_channels + c.cond_channels) * 9 + c.base_channels;
  total += c.out_channels * c.base_channels * 9 + c.out_channels;
  std::vector<std::size_t> outs;
  std::size_t ch = c.base_channels;
  for (std::size_t l = 0; l < c.channel_mults.size(); ++l) {
    for (std::size_t b = 0; b < c.blocks_per_level; ++b) {
      const std::size_t out = c.base_channels * c.channel_mults[l];
      total += block(ch, out, ch != out || (b == 0 && l > 0));
      outs.push_back(out);
      ch = out;
    }
  }
  total += block(ch, ch, false);  // middle
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const std::size_t prev = i + 1 < outs.size() ? outs[i + 1] : ch;
    total += block(prev + outs[i], outs[i], true);
  }
  return total;
}

// Full U-Net written out without any depth-skip logic.
template <class Real>
ss::Tensor<Real> reference_forward(const ss::DenoiserModel<Real>& m, const ss::Tensor<Real>& x,
                                   const ss::Tensor<Real>& c, std::span<const int> t) {
  using namespace ss::ops;
  const auto& cfg = m.config();
  const auto P = [&](const std::string& n) { return m.param(n); };
  auto temb = ss::timestep_features<Real>(t, cfg.time_embed_dim);
  temb = silu(affine(temb, P("time.fc1.weight"), P("time.fc1.bias")));
  temb = silu(affine(temb, P("time.fc2.weight"), P("time.fc2.bias")));
  const auto block = [&](const std::string& p, const ss::Tensor<Real>& in, std::size_t stride, bool proj) {
    auto h = conv2d(in, P(p + ".conv1.weight"), P(p + ".conv1.bias"), stride);
    h = add_channel_bias(h, affine(temb, P(p + ".temb.weight"), P(p + ".temb.bias")));
    h = conv2d(silu(h), P(p + ".conv2.weight"), P(p + ".conv2.bias"));
    return add(proj ? conv2d(in, P(p + ".skip.weight"), P(p + ".skip.bias"), stride) : in, h);
  };
  auto h = conv2d(concat_channels(x, c), P("in.conv.weight"), P("in.conv.bias"));
  std::vector<ss::Tensor<Real>> skips;
  std::vector<std::string> names;
  std::vector<bool> strided;
  std::size_t ch = cfg.base_channels;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string name = "L" + std::to_string(l + 1) + ".B" + std::to_string(b + 1);
      const bool s2 = b == 0 && l > 0;
      const std::size_t out = cfg.base_channels * cfg.channel_mults[l];
      h = block("enc." + name, h, s2 ? 2 : 1, s2 || out != ch);
      ch = out;
      skips.push_back(h);
      names.push_back(name);
      strided.push_back(s2);
    }
  }
  h = block("mid", h, 1, false);
  for (std::size_t i = skips.size(); i-- > 0;) {
    if (i + 1 < skips.size() && strided[i + 1]) h = upsample2x(h);
    h = block("dec." + names[i], concat_channels(h, skips[i]), 1, true);
  }
  return conv2d(silu(h), P("out.conv.weight"), P("out.conv.bias"));
}

// Randomizes every parameter, including the zero-initialized output conv.
template <class Real>
void randomize(ss::DenoiserModel<Real>& m, std::uint64_t seed, double scale = 0.3) {
  ss::Rng rng(seed);
  for (auto& p : m.params()) {
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor[i] = static_cast<Real>(scale * rng.normal());
  }
}

}  // namespace

TEST(UNetConfig, DefaultDepthIsNine) { EXPECT_EQ(ss::UNetConfig{}.max_depth(), 9u); }

TEST(UNetConfig, InvalidConfigListsViolations) {
  ss::UNetConfig c;
  c.image_size = 24;
  c.base_channels = 0;
  try {
    c.validate();
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("image_size"), std::string::npos);
    EXPECT_NE(msg.find("base_channels"), std::string::npos);
  }
  ss::UNetConfig deep;
  deep.image_size = 4;
  EXPECT_THROW(deep.validate(), std::invalid_argument);
}

TEST(Build, SameSeedSameParameters) {
  const auto a = ss::DenoiserModel<float>::build(fast_config(), 5);
  const auto b = ss::DenoiserModel<float>::build(fast_config(), 5);
  const auto c = ss::DenoiserModel<float>::build(fast_config(), 6);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].name, b.params()[i].name);
    const auto va = a.params()[i].tensor.values();
    const auto vb = b.params()[i].tensor.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    const auto vc = c.params()[i].tensor.values();
    differs |= !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Build, ParameterCountMatchesIndependentCount) {
  for (const auto& cfg : {ss::UNetConfig{}, fast_config(), tiny_config()}) {
    const auto m = ss::DenoiserModel<float>::build(cfg, 1);
    EXPECT_EQ(m.parameter_count(), count_parameters(cfg));
  }
}

TEST(Build, NamesFollowTheDocumentedScheme) {
  const auto m = ss::DenoiserModel<float>::build(ss::UNetConfig{}, 1);
  std::set<std::string> names;
  for (const auto& p : m.params()) names.insert(p.name);
  EXPECT_EQ(names.size(), m.params().size());
  for (const char* n : {"enc.L2.B1.conv1.weight", "enc.L2.B1.skip.weight", "dec.L4.B2.temb.bias", "mid.conv2.weight",
                        "time.fc1.weight", "out.conv.bias"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  EXPECT_FALSE(names.count("enc.L1.B1.skip.weight"));
  EXPECT_EQ(m.depth_of("mid.conv1.weight"), 9u);
  EXPECT_EQ(m.depth_of("enc.L3.B2.conv1.weight"), 6u);
  EXPECT_EQ(m.depth_of("dec.L3.B2.conv1.weight"), 6u);
  EXPECT_EQ(m.depth_of("in.conv.weight"), 1u);
}

TEST(Build, OutputConvIsZero) {
  const auto m = ss::DenoiserModel<float>::build(fast_config(), 3);
  for (float v : m.param("out.conv.weight").values()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, FullDepthMatchesReferenceExactly) {
  auto m = ss::DenoiserModel<float>::build(fast_config(), 7);
  randomize(m, 8);
  const auto x = noise<float>({3, 1, 16, 16}, 9);
  const auto c = noise<float>({3, 1, 16, 16}, 10);
  const std::vector<int> t{0, 500, 999};
  const auto a = m.forward(x, c, t);
  const auto b = reference_forward(m, x, c, t);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << i;
}

TEST(Forward, EveryDepthGivesFiniteOutputOfInputShape) {
  auto m = ss::DenoiserModel<float>::build(fast_config(), 11);
  randomize(m, 12);
  const auto x = noise<float>({2, 1, 16, 16}, 13);
  const auto c = noise<float>({2, 1, 16, 16}, 14);
  for (std::size_t d = 1; d <= m.max_depth(); ++d) {
    m.set_active_depth(d);
    const auto y = m.forward(x, c, 321);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(y.all_finite()) << "depth " << d;
  }
}

TEST(Forward, RejectsBadInputs) {
  const auto m = ss::DenoiserModel<float>::build(fast_config(), 1);
  const auto x = noise<float>({2, 1, 16, 16}, 1);
  EXPECT_THROW(m.forward(x, x, 1000), std::out_of_range);
  EXPECT_THROW(m.forward(x, x, -1), std::out_of_range);
  EXPECT_THROW(m.forward(noise<float>({2, 2, 16, 16}, 2), x, 3), ss::shape_error);
  EXPECT_THROW(m.forward(x, noise<float>({2, 1, 8, 8}, 2), 3), ss::shape_error);
}

TEST(Forward, ZeroInputGivesStableBiasResponse) {
  auto m = ss::DenoiserModel<float>::build(fast_config(), 15);
  randomize(m, 16);
  const ss::Tensor<float> z({2, 1, 16, 16}, 0.0f);
  const auto a = m.forward(z, z, 10);
  const auto b = m.forward(z, z, 10);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
  // Both batch items see identical inputs, so they get identical outputs.
  const std::size_t per = a.numel() / 2;
  for (std::size_t i = 0; i < per; ++i) ASSERT_EQ(a[i], a[per + i]);
}

TEST(Forward, PrunedForwardReadsNoDeeperParameter) {
  auto m = ss::DenoiserModel<float>::build(fast_config(), 17);
  const auto x = noise<float>({1, 1, 16, 16}, 18);
  std::vector<std::string> log;
  m.set_access_log(&log);
  for (std::size_t d = 1; d <= m.max_depth(); ++d) {
    log.clear();
    m.set_active_depth(d);
    m.forward(x, x, 5);
    std::set<std::string> read(log.begin(), log.end());
    for (const auto& name : read) EXPECT_LE(m.depth_of(name), d) << name << " read at depth " << d;
    // Everything owned up to d is read.
    for (const auto& p : m.params_up_to_depth(d)) EXPECT_TRUE(read.count(p.name)) << p.name;
  }
  m.set_access_log(nullptr);
}

TEST(Forward, PrecisionModesAgree) {
  auto m64 = ss::DenoiserModel<double>::build(fast_config(), 19);
  randomize(m64, 20, 0.2);
  const auto m32 = m64.cast<float>();
  const auto x = noise<double>({2, 1, 16, 16}, 21);
  const auto c = noise<double>({2, 1, 16, 16}, 22);
  const auto y64 = m64.forward(x, c, 400);
  const auto y32 = m32.forward(x.cast<float>(), c.cast<float>(), 400);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y64.numel(); ++i) {
    num += std::pow(y64[i] - static_cast<double>(y32[i]), 2);
    den += y64[i] * y64[i];
  }
  EXPECT_LT(std::sqrt(num / den), 1e-4);
}

TEST(Gradients, TinyUNetMatchesFiniteDifferencesAtEveryDepth) {
  auto m = ss::DenoiserModel<double>::build(tiny_config(), 23);
  randomize(m, 24, 0.4);
  const auto x = noise<double>({2, 1, 8, 8}, 25);
  const auto c = noise<double>({2, 1, 8, 8}, 26);
  const auto target = noise<double>({2, 1, 8, 8}, 27);
  const std::vector<int> t{3, 700};
  for (std::size_t d = 1; d <= m.max_depth(); ++d) {
    m.set_active_depth(d);
    const auto loss = [&] { return ss::ops::squared_error(m.forward(x, c, t), target); };
    std::vector<ss::Tensor<double>> params;
    for (auto& p : m.params()) params.push_back(p.tensor);
    const auto res = ss::grad_check(loss, params, 32, 1e-5, 28 + d);
    EXPECT_LT(res.max_relative_error, 1e-4) << "depth " << d;
    for (const auto& p : m.params()) {
      if (m.depth_of(p.name) <= d) continue;
      if (!p.tensor.has_grad()) continue;
      for (double g : p.tensor.grad()) ASSERT_EQ(g, 0.0) << p.name << " at depth " << d;
    }
  }
}

TEST(Profile, FractionsAreCumulativeAndEndAtOne) {
  const auto prof = ss::depth_profile(ss::UNetConfig{});
  ASSERT_EQ(prof.levels.size(), 9u);
  double prev_p = 0.0, prev_m = 0.0;
  std::size_t sum = 0;
  for (const auto& l : prof.levels) {
    EXPECT_GE(l.cumulative_param_fraction, prev_p);
    EXPECT_GE(l.cumulative_mac_fraction, prev_m);
    prev_p = l.cumulative_param_fraction;
    prev_m = l.cumulative_mac_fraction;
    sum += l.params;
  }
  EXPECT_EQ(prof.levels.back().cumulative_param_fraction, 1.0);
  EXPECT_EQ(prof.levels.back().cumulative_mac_fraction, 1.0);
  EXPECT_EQ(sum, prof.total_params);
  EXPECT_EQ(prof.total_params, count_parameters(ss::UNetConfig{}));
}

TEST(Profile, DeepHalfHoldsMostParameters) {
  const auto prof = ss::depth_profile(ss::UNetConfig{});
  const std::size_t dmax = prof.levels.size();
  const std::size_t deep = (dmax + 1) / 2;
  std::size_t n = 0;
  for (std::size_t d = dmax - deep + 1; d <= dmax; ++d) n += prof.levels[d - 1].params;
  EXPECT_GT(static_cast<double>(n) / prof.total_params, 0.5);
}

TEST(Profile, CapacityStrictlyIncreasesWithDepth) {
  const auto m = ss::DenoiserModel<float>::build(ss::UNetConfig{}, 1);
  for (std::size_t d = 1; d < m.max_depth(); ++d) {
    EXPECT_LT(m.parameter_count_at_depth(d), m.parameter_count_at_depth(d + 1));
  }
}

TEST(Profile, CsvMatchesSchema) {
  const std::string csv = ss::depth_profile(fast_config()).csv();
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header, "depth,params,param_fraction,cumulative_param_fraction,macs,mac_fraction,cumulative_mac_fraction");
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + fast_config().max_depth());
}

TEST(Profile, MacsMatchConvolutionCounts) {
  // Depth 1 of the fast config: time MLP, input conv, output conv, enc/dec L1.B1.
  const auto cfg = fast_config();
  const std::uint64_t S2 = 256, E = 32;
  std::uint64_t expect = 2 * E * E + S2 * 8 * 2 * 9 + S2 * 1 * 8 * 9;
  expect += S2 * 8 * 8 * 9 + E * 8 + S2 * 8 * 8 * 9;                    // enc.L1.B1
  expect += S2 * 8 * 16 * 9 + E * 8 + S2 * 8 * 8 * 9 + S2 * 8 * 16;     // dec.L1.B1
  EXPECT_EQ(ss::macs_per_depth(cfg)[1], expect);
}
