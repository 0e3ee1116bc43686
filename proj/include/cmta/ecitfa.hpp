// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Event-guided cascaded inter-frame temporal feature alignment.
//
// Neighbouring frame pyramids are aligned to the target frame from the
// coarsest level to the finest. At every level the outermost frames are
// aligned first and the results collapse inward ring by ring until a final
// alignment centred on the target. Each alignment is one CTFA block; blocks
// are shared within a level.

#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "cmta/autograd.hpp"
#include "cmta/nn.hpp"

namespace cmta {

inline constexpr int kPyramidLevels = 3;

/// Level s has spatial size (H / 2^s, W / 2^s).
struct FeaturePyramid {
  std::vector<Var> levels;

  const Var& operator[](int s) const { return levels.at(static_cast<std::size_t>(s)); }
  int size() const { return static_cast<int>(levels.size()); }
};

/// Throws ShapeError unless the pyramid has kPyramidLevels dyadic levels.
void validate_pyramid(const FeaturePyramid& pyramid, const char* what);

/// Spatially varying s_k x s_k kernels, (s_k * s_k) x H x W.
struct DynamicFilter {
  Var weights;
  int kernel_size = 3;
};

DynamicFilter make_dynamic_filter(Var weights, int kernel_size);

/// T_hat(h, w) = sum over taps of D(tap, h, w) * T(:, h + dy, w + dx), zero padded.
Var apply_dynamic_filter(const DynamicFilter& filter, const Var& features);

/// One alignment unit at a fixed pyramid level.
class Ctfa {
 public:
  Ctfa() = default;
  Ctfa(ParameterStore& store, const std::string& name, int channels, int kernel_size, bool has_hidden,
       bool normalize_attention);

  /// S = N_f(frame || h); at the coarsest level `hidden` must be absent.
  Var fuse_hidden(const Var& frame_feat, const std::optional<Var>& hidden) const;
  /// T = N_h(N_gf(prev || cur || ev_fwd) || N_gb(cur || next || ev_bwd)).
  Var aggregate_temporal(const Var& prev, const Var& cur, const Var& next, const Var& ev_fwd, const Var& ev_bwd) const;
  DynamicFilter generate_dynamic_filter(const Var& temporal) const;
  /// F_hat = MLP(A) + A with A the channel cross-attention of W_Q(S) against
  /// W_K(T_hat), W_V(T_hat).
  Var attention_fuse(const Var& fused, const Var& filtered) const;

  Var operator()(const Var& prev, const Var& cur, const Var& next, const std::optional<Var>& hidden,
                 const Var& ev_a, const Var& ev_b) const;

  int channels() const { return channels_; }
  int kernel_size() const { return kernel_size_; }
  bool has_hidden() const { return has_hidden_; }
  const Var& alpha() const { return alpha_; }
  std::vector<Var> parameters() const;

 private:
  int channels_ = 0;
  int kernel_size_ = 3;
  bool has_hidden_ = false;
  bool normalize_attention_ = true;
  ConvResBlock fuse_;            // N_f
  ConvResBlock forward_group_;   // N_{g,f}
  ConvResBlock backward_group_;  // N_{g,b}
  ConvResBlock merge_;           // N_h
  ConvResBlock filter_gen_;      // N_l
  ChannelProjection wq_, wk_, wv_;
  PointwiseMlp mlp_;
  Var alpha_;
};

/// Frame index relative to the target t.
struct CtfaCall {
  int level;
  int frame_offset;
  const Ctfa* block;
};

struct CascadeResult {
  FeaturePyramid target;  // F_hat_t at every level
  std::vector<CtfaCall> calls;
};

class Ecitfa {
 public:
  Ecitfa() = default;
  /// `base_channels` is the level-0 width; level s has base * 2^s channels.
  Ecitfa(ParameterStore& store, const std::string& name, int base_channels, int kernel_size, bool normalize_attention);

  /// h^s = Dconv4x4(F_hat^{s+1}); defined for s in {0, 1}.
  Var upsample_hidden(int level, const Var& coarser_aligned) const;

  /// `frames` holds 2P+1 pyramids in time order (target in the middle) and
  /// `events` the 2P pair pyramids, events[m] spanning frames m and m+1.
  CascadeResult cascade_align(std::span<const FeaturePyramid> frames, std::span<const FeaturePyramid> events) const;

  const Ctfa& block(int level) const { return blocks_.at(static_cast<std::size_t>(level)); }
  std::vector<Var> parameters() const;

 private:
  std::array<Ctfa, kPyramidLevels> blocks_;
  std::array<Upsample2x, kPyramidLevels - 1> up_;  // up_[s] produces h^s
};

}  // namespace cmta
