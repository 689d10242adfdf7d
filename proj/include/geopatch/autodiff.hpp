// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation.
//
// A Tape records every operation applied to its nodes. Leaves are created
// with tape.leaf(); every op returns a Var handle to a new node. Calling
// tape.backward(loss) once fills grad() on every node that requires a
// gradient. A tape supports a single backward pass; build a new tape (or
// call reset()) for the next evaluation.
//
// Tape<float> is the compute mode, Tape<double> the verification mode.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "geopatch/tensor.hpp"

namespace geopatch::ad {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after backward(); zero-filled when the node received none.
  const std::vector<T>& grad() const;
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op node. `backward` runs only when the output requires grad.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  void backward(Var<T> loss);
  void reset();

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<T>& grad(std::size_t id);
  /// Accumulation buffer for `id`; allocated on first use. Backward rules
  /// must only call this for inputs that require grad.
  std::vector<T>& grad_buffer(std::size_t id);
  /// Gradient flowing into `id` during backward (may be empty = all zero).
  const std::vector<T>& incoming(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<T> grad;
  };
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <typename T>
const std::vector<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}
template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

enum class Padding { same, valid };

// Ops. Binary elementwise ops require identical shapes.

/// Cross-correlation of an HWC input with a [kh, kw, Cin, Cout] kernel.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, int stride, Padding padding);
/// Adds a per-channel bias to the last axis.
template <typename T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias);
/// 2x2 non-overlapping max pool on HWC input; ties route to the first index.
template <typename T>
Var<T> maxpool2(Var<T> input);
/// input[n] x weights[n, m] + bias[m]
template <typename T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias);

template <typename T>
Var<T> relu(Var<T> x);
/// Clamp to [0, 1]; gradient passes only strictly inside the interval.
template <typename T>
Var<T> clamp01(Var<T> x);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T factor);
template <typename T>
Var<T> sum(Var<T> x);
/// Sum of x[i] * weights[i] with constant weights; returns a scalar.
template <typename T>
Var<T> weighted_sum(Var<T> x, std::vector<T> weights);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
/// out[i] = src[index[i]]; backward scatter-adds.
template <typename T>
Var<T> gather(Var<T> src, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape);
/// Copy of `base` with `patch` written over the window starting at
/// (top, left). Rows/columns falling outside `base` are dropped.
template <typename T>
Var<T> paste(Var<T> base, Var<T> patch, int top, int left);
/// -log softmax(logits)[label], max-subtracted.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, int label);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the tape gradient of a scalar function against central
/// differences at every coordinate of `at`. Relative error uses
/// max(|analytic|, |numeric|, floor) as denominator.
FiniteDiffReport finite_diff_check(const std::function<Var<double>(Tape<double>&, Var<double>)>& f,
                                   const Tensor<double>& at, double step = 1e-5, double floor = 1e-6);

}  // namespace geopatch::ad
