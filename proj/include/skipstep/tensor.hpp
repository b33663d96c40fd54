// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skipstep {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class Real>
class Tape;

/// Dense row-major array with an optional gradient accumulator.
///
/// Tensor is a handle: copies share storage, so a parameter held by a model
/// and the same parameter captured on a tape are one object. Use clone() for
/// an independent copy.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : impl_(std::make_shared<Impl>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw shape_error("tensor dimensions must be positive, got " + shape_str(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<Real> values) : impl_(std::make_shared<Impl>()) {
    if (values.size() != shape_numel(shape)) {
      throw shape_error("value count " + std::to_string(values.size()) + " does not match shape " +
                        shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<Real> values() { return impl_->data; }
  std::span<const Real> values() const { return impl_->data; }
  Real* data() { return impl_->data.data(); }
  const Real* data() const { return impl_->data.data(); }
  Real& operator[](std::size_t i) { return impl_->data[i]; }
  const Real& operator[](std::size_t i) const { return impl_->data[i]; }

  Real item() const {
    if (numel() != 1) throw shape_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<Real> grad() { return impl_->grad; }
  std::span<const Real> grad() const { return impl_->grad; }

  /// Allocates a zeroed gradient buffer if none exists.
  std::span<Real> ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), Real(0));
    return impl_->grad;
  }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0)); }
  void drop_grad() { impl_->grad.clear(); }

  /// Independent copy of the values; no gradient, not on any tape.
  Tensor clone() const { return Tensor(impl_->shape, impl_->data); }

  template <class Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(impl_->data.begin(), impl_->data.end());
    return Tensor<Other>(impl_->shape, std::move(out));
  }

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  bool all_finite() const {
    return std::all_of(impl_->data.begin(), impl_->data.end(), [](Real v) { return std::isfinite(v); });
  }

  /// Tape that produced this tensor, or nullptr for leaves and untracked values.
  const Tape<Real>* producer() const { return impl_->producer; }

 private:
  friend class Tape<Real>;
  struct Impl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    const Tape<Real>* producer = nullptr;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Operations are appended as they execute, so the list is topologically
/// ordered by construction and backward() is a single reverse sweep.
template <class Real>
class Tape {
 public:
  struct Op {
    std::string_view name;
    std::vector<Tensor<Real>> inputs;
    Tensor<Real> output;
    /// Reads output.grad() and accumulates into the grads of inputs that require them.
    std::function<void(Op&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    for (Op& op : ops_) op.output.impl_->producer = nullptr;
  }

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }

  void record(std::string_view name, std::vector<Tensor<Real>> inputs, Tensor<Real> output,
              std::function<void(Op&)> backward) {
    output.set_requires_grad(true);
    output.impl_->producer = this;
    ops_.push_back(Op{name, std::move(inputs), std::move(output), std::move(backward)});
  }

  /// Populates grads of every requires_grad tensor reachable from loss.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw shape_error("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (loss.producer() != this) throw std::invalid_argument("backward: loss was not produced on this tape");
    for (Op& op : ops_) op.output.drop_grad();
    Tensor<Real> root = loss;
    root.ensure_grad()[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward(*it);
    }
  }

  void clear() {
    for (Op& op : ops_) op.output.impl_->producer = nullptr;
    ops_.clear();
  }

  static Tape* active() { return active_ref(); }

 private:
  template <class>
  friend class TapeScope;
  static Tape*& active_ref() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  std::vector<Op> ops_;
};

/// Makes a tape the recording target for the current thread while in scope.
template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : prev_(Tape<Real>::active_ref()) { Tape<Real>::active_ref() = &tape; }
  ~TapeScope() { Tape<Real>::active_ref() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* prev_;
};

}  // namespace skipstep
