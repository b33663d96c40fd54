// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skipstep {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping; max_norm <= 0 only measures.
template <class Real>
double clip_grad_norm(std::vector<NamedTensor<Real>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& p : params) {
      for (Real& g : p.tensor.grad()) g = static_cast<Real>(static_cast<double>(g) * k);
    }
  }
  return norm;
}

/// Adam with bias-corrected moments over a fixed list of named parameters.
template <class Real>
class Adam {
 public:
  Adam(std::vector<NamedTensor<Real>> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const auto& p : params_) {
      first_.emplace_back(p.tensor.numel(), 0.0);
      second_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  const AdamHyper& hyper() const { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  std::uint64_t steps() const { return step_; }
  const std::vector<NamedTensor<Real>>& params() const { return params_; }
  std::vector<NamedTensor<Real>>& params() { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Applies one update from the current gradients.
  void step() {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) throw std::runtime_error("adam: parameter '" + p.name + "' has no gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<Real>& t = params_[k].tensor;
      auto g = t.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * gi;
        v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        t[i] = static_cast<Real>(static_cast<double>(t[i]) - hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps));
      }
    }
  }

 private:
  std::vector<NamedTensor<Real>> params_;
  AdamHyper hyper_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t step_ = 0;
};

}  // namespace skipstep
