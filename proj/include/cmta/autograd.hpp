// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over C x H x W feature maps.
//
// Every op returns a Var whose node remembers its inputs and a closure that
// pushes the output gradient back into them. Graph recording is skipped while
// a NoGradGuard is alive on the current thread, so inference keeps no
// activations around.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cmta/tensor.hpp"

namespace cmta {

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Adds `g` into this node's gradient, allocating it on first use.
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// Direct access for optimizers and tests. Mutating a value that is already
  /// part of a recorded graph invalidates that graph's gradients.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool defined() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = Tensor(); }

  /// Back-propagates from a single-element Var with seed 1.
  void backward() const;
  void backward(const Tensor& seed) const;

  /// Identity of the underlying storage; equal for shared parameters.
  const Node* id() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Receives every softmax matrix produced by transposed_attention on this
/// thread while installed. Used by diagnostics and acceptance checks.
using AttentionObserver = std::function<void(const Tensor& softmax_rows)>;

class AttentionObserverScope {
 public:
  explicit AttentionObserverScope(AttentionObserver observer);
  ~AttentionObserverScope();
  AttentionObserverScope(const AttentionObserverScope&) = delete;
  AttentionObserverScope& operator=(const AttentionObserverScope&) = delete;

 private:
  AttentionObserver previous_;
};

namespace ops {

Var add(const Var& a, const Var& b);
Var add(std::span<const Var> terms);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
/// Exact (erf-based) GELU.
Var gelu(const Var& a);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, std::int64_t begin, std::int64_t end);

/// Cross-correlation of a Cin x H x W input with Cout x Cin x k x k weights.
/// `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Transposed convolution; weights are Cin x Cout x k x k. Output size is
/// (H - 1) * stride - 2 * pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Per-channel convolution; weights are C x 1 x k x k.
Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int pad);

/// 2x2 mean pooling; requires even spatial dims.
Var avg_pool2(const Var& x);

/// Channel ("transposed") attention. Q, K, V are C x H x W and are flattened
/// to C x L matrices; A = softmax_rows(Q K^T / alpha) is C x C and the output
/// is A V reshaped back. With `normalize` set, rows of Q and K are scaled to
/// unit L2 norm before the product. `alpha` is a one-element Var.
Var transposed_attention(const Var& q, const Var& k, const Var& v, const Var& alpha, bool normalize);

/// Per-pixel dynamic filtering. `filter` is (s*s) x H x W, `x` is C x H x W;
/// each output pixel is the s x s neighbourhood of `x` weighted by that
/// pixel's kernel, shared across channels, with zero padding.
Var dynamic_filter(const Var& filter, const Var& x, int kernel_size);

/// Mean absolute error, returns a one-element Var.
Var l1_loss(const Var& pred, const Var& target);
/// sum(a * weights) for a constant weight tensor; one-element result.
Var weighted_sum(const Var& a, const Tensor& weights);

}  // namespace ops

/// Index of kernel tap (dy, dx), both in [-r, r], in a dynamic filter with
/// kernel size 2r + 1.
inline int dynamic_tap(int dy, int dx, int kernel_size) {
  const int r = kernel_size / 2;
  return (dy + r) * kernel_size + (dx + r);
}

}  // namespace cmta
