// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#include <skipstep/diffusion.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace ss = skipstep;

namespace {

template <class Real>
ss::Tensor<Real> noise(ss::Shape shape, std::uint64_t seed, double scale = 1.0) {
  ss::Rng rng(seed);
  ss::Tensor<Real> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(scale * rng.normal());
  return t;
}

// Knows the clean images and returns the exact noise that produced x_t.
template <class Real>
struct OracleModel {
  ss::Tensor<Real> x0;
  const ss::NoiseSchedule* schedule;
  ss::Tensor<Real> forward(const ss::Tensor<Real>& x, const ss::Tensor<Real>&, std::span<const int> t) const {
    ss::Tensor<Real> eps(x.shape());
    const std::size_t per = x.numel() / x.dim(0);
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      const double ab = schedule->alpha_bar(t[n]);
      for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
        eps[i] = static_cast<Real>((x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab));
      }
    }
    return eps;
  }
};

template <class Real>
struct ZeroModel {
  ss::Tensor<Real> forward(const ss::Tensor<Real>& x, const ss::Tensor<Real>&, std::span<const int>) const {
    return ss::Tensor<Real>(x.shape(), Real(0));
  }
};

// eps = a x + c, elementwise, so every image is independent of its batch.
template <class Real>
struct LinearModel {
  double a = 0.5;
  mutable std::size_t calls = 0;
  ss::Tensor<Real> forward(const ss::Tensor<Real>& x, const ss::Tensor<Real>& c, std::span<const int>) const {
    ++calls;
    ss::Tensor<Real> eps(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) eps[i] = static_cast<Real>(a * x[i] + c[i]);
    return eps;
  }
};

const ss::NoiseSchedule& schedule() {
  static const ss::NoiseSchedule s = ss::linear_beta_schedule(1000);
  return s;
}

std::vector<std::uint64_t> seeds(std::size_t n, std::uint64_t base = 100) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

}  // namespace

TEST(Schedule, BetaEndpointsAreExact) {
  const auto& s = schedule();
  ASSERT_EQ(s.size(), 1000u);
  EXPECT_EQ(s.betas.front(), 1e-4);
  EXPECT_EQ(s.betas.back(), 0.02);
  for (std::size_t t = 1; t < s.size(); ++t) EXPECT_GT(s.betas[t], s.betas[t - 1]);
}

TEST(Schedule, AlphaBarMatchesIndependentProduct) {
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * t / 999.0L);
  const double ab = schedule().alpha_bar(999);
  EXPECT_NEAR(ab, static_cast<double>(prod), 1e-12);
  EXPECT_NEAR(ab, 4.0e-5, 0.2e-5);
  EXPECT_THROW(schedule().alpha_bar(1000), std::out_of_range);
  EXPECT_THROW(ss::linear_beta_schedule(1), std::invalid_argument);
}

TEST(QSample, EndpointsAndRoundTrip) {
  const auto x0 = noise<double>({3, 1, 4, 4}, 1, 0.5);
  const auto eps = noise<double>({3, 1, 4, 4}, 2);
  const auto x_first = ss::q_sample(x0, 0, eps, schedule());
  const auto x_last = ss::q_sample(x0, 999, eps, schedule());
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    // sqrt(1 - alpha_bar_0) = 0.01
    EXPECT_NEAR(x_first[i], x0[i], 0.0101 * std::abs(eps[i]) + 1e-4 * std::abs(x0[i]));
    EXPECT_NEAR(x_last[i], eps[i], 0.01);
  }
  const std::vector<int> t{5, 400, 999};
  const auto xt = ss::q_sample(x0, std::span<const int>(t), eps, schedule());
  const std::size_t per = 16;
  for (std::size_t n = 0; n < 3; ++n) {
    const double ab = schedule().alpha_bar(t[n]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      EXPECT_NEAR((xt[i] - std::sqrt(1 - ab) * eps[i]) / std::sqrt(ab), x0[i], 1e-9);
    }
  }
  EXPECT_THROW(ss::q_sample(x0, 3, noise<double>({3, 1, 4, 2}, 3), schedule()), ss::shape_error);
}

TEST(TrainingLoss, OracleModelHasZeroLoss) {
  const auto x0 = noise<double>({8, 1, 8, 8}, 4, 0.5);
  const auto cond = noise<double>({8, 1, 8, 8}, 5);
  const OracleModel<double> oracle{x0, &schedule()};
  const auto loss = ss::training_loss(oracle, x0, cond, 6, schedule(), 0.0);
  EXPECT_LT(loss.item(), 1e-20);
}

TEST(TrainingLoss, ZeroModelLossIsNoiseVariance) {
  const auto x0 = noise<double>({64, 1, 16, 16}, 7, 0.5);
  const auto loss = ss::training_loss(ZeroModel<double>{}, x0, x0, 8, schedule(), 0.1);
  EXPECT_NEAR(loss.item(), 1.0, 0.05);
}

TEST(TrainingLoss, SameSeedSameLoss) {
  const auto x0 = noise<float>({4, 1, 8, 8}, 9, 0.5);
  const LinearModel<float> m;
  EXPECT_EQ(ss::training_loss(m, x0, x0, 10, schedule()).item(), ss::training_loss(m, x0, x0, 10, schedule()).item());
}

TEST(DdimSigma, ZeroAtEtaZeroAndPosteriorAtEtaOne) {
  const auto& s = schedule();
  for (int t : {1, 10, 500, 999}) {
    const double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1);
    EXPECT_EQ(ss::ddim_sigma(0.0, ab, abp), 0.0);
    const double posterior = (1 - abp) / (1 - ab) * s.betas[t];
    EXPECT_NEAR(std::pow(ss::ddim_sigma(1.0, ab, abp), 2), posterior, 1e-12 * std::max(1.0, posterior) + 1e-15);
  }
}

TEST(Sampler, OracleRecoversCleanImage) {
  const auto x0 = noise<float>({4, 1, 8, 8}, 11, 0.3);
  const OracleModel<float> oracle{x0, &schedule()};
  const ss::Tensor<float> cond({4, 1, 8, 8}, 0.0f);
  for (const std::vector<int>& ts : {std::vector<int>{999}, std::vector<int>{0, 249, 499, 749, 999},
                                     std::vector<int>{3, 50, 998}}) {
    for (double eta : {0.0, 1.0}) {
      ss::SamplerSpec spec{eta, 1.0, ts, 0};
      const auto out = ss::ddim_sample<float>(oracle, cond, spec, seeds(4), schedule(), {1, 8, 8});
      for (std::size_t i = 0; i < x0.numel(); ++i) ASSERT_NEAR(out.images[i], x0[i], 1e-4);
    }
  }
}

TEST(Sampler, OutputIsClamped) {
  const LinearModel<float> m{-3.0};
  const auto cond = noise<float>({2, 1, 8, 8}, 12);
  ss::SamplerSpec spec{0.0, 1.0, {0, 500, 999}, 0};
  const auto out = ss::ddim_sample<float>(m, cond, spec, seeds(2), schedule(), {1, 8, 8});
  for (float v : out.images.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Sampler, DeterministicAtEtaZero) {
  const LinearModel<float> m;
  const auto cond = noise<float>({3, 1, 8, 8}, 13, 0.2);
  ss::SamplerSpec spec{0.0, 1.0, {0, 100, 400, 999}, 0};
  const auto a = ss::ddim_sample<float>(m, cond, spec, seeds(3), schedule(), {1, 8, 8});
  spec.noise_seed = 77;  // unused at eta = 0
  const auto b = ss::ddim_sample<float>(m, cond, spec, seeds(3), schedule(), {1, 8, 8});
  for (std::size_t i = 0; i < a.images.numel(); ++i) ASSERT_EQ(a.images[i], b.images[i]);
}

TEST(Sampler, NoiseSeedMattersOnlyWithEta) {
  const LinearModel<float> m{0.1};
  const auto cond = noise<float>({2, 1, 8, 8}, 14, 0.2);
  ss::SamplerSpec spec{1.0, 1.0, {0, 100, 400, 999}, 0};
  const auto a = ss::ddim_sample<float>(m, cond, spec, seeds(2), schedule(), {1, 8, 8});
  const auto a2 = ss::ddim_sample<float>(m, cond, spec, seeds(2), schedule(), {1, 8, 8});
  spec.noise_seed = 1;
  const auto b = ss::ddim_sample<float>(m, cond, spec, seeds(2), schedule(), {1, 8, 8});
  bool differs = false;
  for (std::size_t i = 0; i < a.images.numel(); ++i) {
    ASSERT_EQ(a.images[i], a2.images[i]);
    differs |= a.images[i] != b.images[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, ImageDoesNotDependOnItsBatch) {
  const LinearModel<float> m;
  const auto cond = noise<float>({3, 1, 8, 8}, 15, 0.2);
  ss::SamplerSpec spec{1.0, 1.0, {0, 300, 999}, 4};
  const auto all = ss::ddim_sample<float>(m, cond, spec, seeds(3), schedule(), {1, 8, 8});
  ss::Tensor<float> last({1, 1, 8, 8});
  std::copy_n(cond.data() + 128, 64, last.data());
  const std::vector<std::uint64_t> one{102};
  const auto single = ss::ddim_sample<float>(m, last, spec, one, schedule(), {1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) ASSERT_EQ(single.images[i], all.images[128 + i]);
}

TEST(Sampler, CallCountIsStepsTimesPasses) {
  const auto cond = noise<float>({5, 1, 4, 4}, 16);
  for (double w : {1.0, 2.0}) {
    LinearModel<float> m;
    ss::SamplerSpec spec{0.0, w, {1, 2, 3, 500, 900, 999}, 0};
    const auto out = ss::ddim_sample<float>(m, cond, spec, seeds(5), schedule(), {1, 4, 4});
    const std::size_t passes = w == 1.0 ? 1 : 2;
    EXPECT_EQ(out.model_evaluations, 6u * 5u * passes);
    EXPECT_EQ(m.calls, 6u * passes);
  }
}

TEST(Sampler, GuidanceCombinesConditionalAndUnconditional) {
  // With eps = a x + c, guidance w on c equals the plain conditional path on w c.
  const LinearModel<double> m;
  const auto cond = noise<double>({2, 1, 4, 4}, 17, 0.1);
  ss::Tensor<double> scaled(cond.shape());
  for (std::size_t i = 0; i < cond.numel(); ++i) scaled[i] = 3.0 * cond[i];
  const ss::SamplerSpec guided{0.0, 3.0, {0, 400, 999}, 0};
  const ss::SamplerSpec plain{0.0, 1.0, {0, 400, 999}, 0};
  const auto a = ss::ddim_sample<double>(m, cond, guided, seeds(2), schedule(), {1, 4, 4});
  const auto b = ss::ddim_sample<double>(m, scaled, plain, seeds(2), schedule(), {1, 4, 4});
  for (std::size_t i = 0; i < a.images.numel(); ++i) EXPECT_NEAR(a.images[i], b.images[i], 1e-9);
}

TEST(Sampler, RejectsInvalidSchedules) {
  const LinearModel<float> m;
  const auto cond = noise<float>({2, 1, 4, 4}, 18);
  const auto run = [&](std::vector<int> ts, std::size_t n_seeds = 2) {
    ss::SamplerSpec spec{0.0, 1.0, std::move(ts), 0};
    return ss::ddim_sample<float>(m, cond, spec, seeds(n_seeds), schedule(), {1, 4, 4});
  };
  EXPECT_THROW(run({}), std::invalid_argument);
  EXPECT_THROW(run({5, 5}), std::invalid_argument);
  EXPECT_THROW(run({10, 5}), std::invalid_argument);
  EXPECT_THROW(run({-1, 5}), std::invalid_argument);
  EXPECT_THROW(run({5, 1000}), std::invalid_argument);
  EXPECT_THROW(run({5, 10}, 3), std::invalid_argument);
  EXPECT_NO_THROW(run({0, 999}));
}
