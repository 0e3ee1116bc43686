// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/nn.hpp"

#include <cmath>

#include "cmta/errors.hpp"

namespace cmta {

Var ParameterStore::insert(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
  Var v(std::move(value), /*requires_grad=*/true);
  params_.emplace(name, v);
  order_.push_back(name);
  return v;
}

Var ParameterStore::create_uniform(const std::string& name, const Shape& shape, double bound) {
  return insert(name, Tensor::uniform(shape, rng_, -bound, bound));
}

Var ParameterStore::create_constant(const std::string& name, const Shape& shape, double value) {
  return insert(name, Tensor(shape, value));
}

Var ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter: " + name);
  return it->second;
}

std::vector<Var> ParameterStore::parameters() const {
  std::vector<Var> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(params_.at(n));
  return out;
}

std::int64_t ParameterStore::count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

void ParameterStore::zero(const std::string& prefix) {
  for (auto& [name, v] : params_)
    if (name.compare(0, prefix.size(), prefix) == 0) v.mutable_value().fill(0.0);
}

void append(std::vector<Var>& dst, const std::vector<Var>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel,
               int stride, int pad)
    : stride_(stride), pad_(pad < 0 ? kernel / 2 : pad) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1)
    throw ArgumentError("Conv2d " + name + ": channels and kernel must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight_ = store.create_uniform(name + ".weight", {out_channels, in_channels, kernel, kernel}, bound);
  bias_ = store.create_uniform(name + ".bias", {out_channels}, bound);
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, stride_, pad_); }

Upsample2x::Upsample2x(ParameterStore& store, const std::string& name, int in_channels, int out_channels) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out_channels * 16));
  weight_ = store.create_uniform(name + ".weight", {in_channels, out_channels, 4, 4}, bound);
  bias_ = store.create_uniform(name + ".bias", {out_channels}, bound);
}

Var Upsample2x::operator()(const Var& x) const { return ops::conv_transpose2d(x, weight_, bias_, 2, 1); }

DepthwiseConv2d::DepthwiseConv2d(ParameterStore& store, const std::string& name, int channels, int kernel)
    : pad_(kernel / 2) {
  const double bound = 1.0 / static_cast<double>(kernel);
  weight_ = store.create_uniform(name + ".weight", {channels, 1, kernel, kernel}, bound);
  bias_ = store.create_uniform(name + ".bias", {channels}, bound);
}

Var DepthwiseConv2d::operator()(const Var& x) const { return ops::depthwise_conv2d(x, weight_, bias_, pad_); }

ResBlock::ResBlock(ParameterStore& store, const std::string& name, int channels)
    : first_(store, name + ".conv1", channels, channels, 3), second_(store, name + ".conv2", channels, channels, 3) {}

Var ResBlock::operator()(const Var& x) const { return ops::add(x, second_(ops::relu(first_(x)))); }

std::vector<Var> ResBlock::parameters() const {
  auto out = first_.parameters();
  append(out, second_.parameters());
  return out;
}

ConvResBlock::ConvResBlock(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
                           bool relu_between, int stride)
    : conv_(store, name + ".conv", in_channels, out_channels, 3, stride),
      res_(store, name + ".res", out_channels),
      relu_between_(relu_between) {}

Var ConvResBlock::operator()(const Var& x) const {
  Var y = conv_(x);
  if (relu_between_) y = ops::relu(y);
  return res_(y);
}

std::vector<Var> ConvResBlock::parameters() const {
  auto out = conv_.parameters();
  append(out, res_.parameters());
  return out;
}

PointwiseMlp::PointwiseMlp(ParameterStore& store, const std::string& name, int channels, int expansion)
    : fc1_(store, name + ".fc1", channels, channels * expansion, 1),
      fc2_(store, name + ".fc2", channels * expansion, channels, 1) {}

Var PointwiseMlp::operator()(const Var& x) const { return fc2_(ops::gelu(fc1_(x))); }

std::vector<Var> PointwiseMlp::parameters() const {
  auto out = fc1_.parameters();
  append(out, fc2_.parameters());
  return out;
}

ChannelProjection::ChannelProjection(ParameterStore& store, const std::string& name, int channels)
    : pointwise_(store, name + ".pointwise", channels, channels, 1),
      depthwise_(store, name + ".depthwise", channels, 3) {}

Var ChannelProjection::operator()(const Var& x) const { return depthwise_(pointwise_(x)); }

std::vector<Var> ChannelProjection::parameters() const {
  auto out = pointwise_.parameters();
  append(out, depthwise_.parameters());
  return out;
}

}  // namespace cmta
