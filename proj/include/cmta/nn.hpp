// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cmta/autograd.hpp"

namespace cmta {

/// Owns every learnable tensor of a network under a dotted name. Layers keep
/// Var handles into the store, so two layers built from the same name would
/// alias; `create` refuses duplicates and sharing is done by reusing layer
/// objects instead.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Registers a tensor drawn from U(-bound, bound).
  Var create_uniform(const std::string& name, const Shape& shape, double bound);
  Var create_constant(const std::string& name, const Shape& shape, double value);

  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  /// Names in creation order.
  const std::vector<std::string>& names() const { return order_; }
  std::vector<Var> parameters() const;
  std::int64_t count() const;

  void zero_grad();
  /// Sets every parameter whose name starts with `prefix` to zero.
  void zero(const std::string& prefix = "");

 private:
  Var insert(const std::string& name, Tensor value);

  std::mt19937_64 rng_;
  std::map<std::string, Var> params_;
  std::vector<std::string> order_;
};

void append(std::vector<Var>& dst, const std::vector<Var>& src);

class Conv2d {
 public:
  Conv2d() = default;
  /// Square kernel; "same" padding (kernel / 2) unless `pad` is given.
  Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride = 1, int pad = -1);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const { return {weight_, bias_}; }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }
  int out_channels() const { return static_cast<int>(weight_.value().dim(0)); }

 private:
  Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

/// Stride-2 transposed convolution with a 4x4 kernel: exactly doubles H and W.
class Upsample2x {
 public:
  Upsample2x() = default;
  Upsample2x(ParameterStore& store, const std::string& name, int in_channels, int out_channels);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const { return {weight_, bias_}; }

 private:
  Var weight_, bias_;
};

class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParameterStore& store, const std::string& name, int channels, int kernel = 3);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const { return {weight_, bias_}; }

 private:
  Var weight_, bias_;
  int pad_ = 1;
};

/// x + conv(relu(conv(x))), both 3x3.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParameterStore& store, const std::string& name, int channels);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d first_, second_;
};

/// One 3x3 convolution followed by one residual block, optionally with a
/// ReLU between them.
class ConvResBlock {
 public:
  ConvResBlock() = default;
  ConvResBlock(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
               bool relu_between = false, int stride = 1);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d conv_;
  ResBlock res_;
  bool relu_between_ = false;
};

/// Two 1x1 convolutions with GELU between them.
class PointwiseMlp {
 public:
  PointwiseMlp() = default;
  PointwiseMlp(ParameterStore& store, const std::string& name, int channels, int expansion = 2);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d fc1_, fc2_;
};

/// 1x1 convolution followed by a 3x3 depth-wise convolution.
class ChannelProjection {
 public:
  ChannelProjection() = default;
  ChannelProjection(ParameterStore& store, const std::string& name, int channels);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d pointwise_;
  DepthwiseConv2d depthwise_;
};

}  // namespace cmta
