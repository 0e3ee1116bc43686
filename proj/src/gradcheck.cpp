// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cmta/config.hpp"
#include "cmta/crife.hpp"
#include "cmta/ecitfa.hpp"
#include "cmta/errors.hpp"
#include "cmta/model.hpp"
#include "cmta/nn.hpp"

namespace cmta {

GradCheckResult gradient_check(const std::function<Var()>& loss, std::span<const Var> vars, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ArgumentError("gradient_check: epsilon must be positive");
  std::vector<Var> v(vars.begin(), vars.end());
  for (auto& x : v) x.zero_grad();
  const Var l = loss();
  if (l.value().numel() != 1) throw ShapeError("gradient_check: loss must be a scalar");
  l.backward();
  std::vector<Tensor> analytic;
  for (const auto& x : v) analytic.push_back(x.has_grad() ? x.grad() : Tensor(x.shape()));

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < v.size(); ++i) {
    Tensor& value = v[i].mutable_value();
    for (std::int64_t k = 0; k < value.numel(); ++k) {
      const double saved = value[k];
      value[k] = saved + eps;
      const double up = loss().value()[0];
      value[k] = saved - eps;
      const double down = loss().value()[0];
      value[k] = saved;
      const double gn = (up - down) / (2.0 * eps);
      const double ga = analytic[i][k];
      const double err = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
      ++result.checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        if (err > result.max_rel_error) result.max_rel_error = err;
        result.worst = std::to_string(i) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

std::vector<std::string> gradcheck_blocks() { return {"crife_forward", "ctfa", "cascade_align", "decode", "linear"}; }

namespace {

struct Instance {
  std::mt19937_64 rng;
  std::vector<Var> inputs;

  explicit Instance(std::uint64_t seed) : rng(seed) {}

  Var input(const Shape& shape, double scale = 1.0) {
    Var v(Tensor::normal(shape, rng, scale), true);
    inputs.push_back(v);
    return v;
  }

  /// Fixed random mean-reduced projection of `out` to a scalar; `slot` picks
  /// the weights.
  Var project(const Var& out, std::size_t slot = 0) {
    if (weights.size() <= slot) weights.resize(slot + 1);
    if (weights[slot].empty()) weights[slot] = Tensor::normal(out.shape(), rng, 1.0 / static_cast<double>(out.value().numel()));
    return ops::weighted_sum(out, weights[slot]);
  }

  std::vector<Tensor> weights;
};

std::vector<Var> all_vars(const std::vector<Var>& params, const std::vector<Var>& inputs) {
  std::vector<Var> out = params;
  out.insert(out.end(), inputs.begin(), inputs.end());
  return out;
}

}  // namespace

GradCheckResult gradient_check_block(const std::string& block, int size, double eps, std::uint64_t seed) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ArgumentError("gradient_check: epsilon must be positive");
  if (size < 4 || size % 4 != 0) throw DivisibilityError("gradient_check: size must be a positive multiple of 4");
  const auto n = static_cast<std::int64_t>(size);
  Instance inst(seed);

  if (block == "linear") {
    ParameterStore store(seed);
    Conv2d conv(store, "linear", 3, 4, 3);
    const Var x = inst.input({3, n, n});
    return gradient_check([&] { return inst.project(conv(x)); }, all_vars(conv.parameters(), inst.inputs), eps);
  }
  if (block == "crife_forward") {
    ParameterStore store(seed);
    CrifeOptions opt;
    opt.feature_channels = 4;
    opt.slice_bins = 2;
    opt.event_channels = 2;
    opt.iterations = 2;
    Crife crife(store, "crife", opt);
    const Var feat = inst.input({4, n, n});
    const Var voxel = inst.input({4, n, n});
    return gradient_check([&] { return inst.project(crife.forward(feat, voxel)); },
                          all_vars(crife.parameters(), inst.inputs), eps);
  }
  if (block == "ctfa") {
    ParameterStore store(seed);
    Ctfa ctfa(store, "ctfa", 4, 3, true, true);
    std::vector<Var> in;
    for (int k = 0; k < 6; ++k) in.push_back(inst.input({4, n, n}));
    return gradient_check([&] { return inst.project(ctfa(in[0], in[1], in[2], std::optional<Var>(in[3]), in[4], in[5])); },
                          all_vars(ctfa.parameters(), inst.inputs), eps);
  }
  if (block == "cascade_align") {
    ParameterStore store(seed);
    const int base = 2;
    Ecitfa ecitfa(store, "ecitfa", base, 3, true);
    auto pyramid = [&] {
      FeaturePyramid p;
      for (int s = 0; s < kPyramidLevels; ++s) p.levels.push_back(inst.input({base << s, n >> s, n >> s}));
      return p;
    };
    std::vector<FeaturePyramid> frames, events;
    for (int k = 0; k < 5; ++k) frames.push_back(pyramid());
    for (int k = 0; k < 4; ++k) events.push_back(pyramid());
    auto loss = [&] {
      const auto aligned = ecitfa.cascade_align(frames, events).target;
      std::vector<Var> terms;
      for (int s = 0; s < aligned.size(); ++s) terms.push_back(inst.project(aligned[s], static_cast<std::size_t>(s)));
      return ops::add(terms);
    };
    return gradient_check(loss,
                          all_vars(ecitfa.parameters(), inst.inputs), eps);
  }
  if (block == "decode") {
    CMTAConfig cfg;
    cfg.base_channels = 2;
    cfg.event_channels = 2;
    cfg.voxel_bins = 4;
    cfg.crife_iterations = 2;
    cfg.init_seed = seed;
    const CmtaModel model(cfg);
    FeaturePyramid aligned;
    for (int s = 0; s < kPyramidLevels; ++s) aligned.levels.push_back(inst.input({2 << s, n >> s, n >> s}));
    const Var blur = inst.input({3, n, n});
    return gradient_check([&] { return inst.project(model.decode(aligned, blur).sharp); },
                          all_vars(model.decoder_parameters(), inst.inputs), eps);
  }
  throw ArgumentError("unknown gradient-check block '" + block + "'");
}

}  // namespace cmta
