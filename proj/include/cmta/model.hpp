// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full deblurring network: shallow frame features, per-frame event
// fusion, a shared pyramid encoder, an event-pair pyramid encoder, the
// cascaded alignment and a U-shaped decoder with a residual output.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cmta/config.hpp"
#include "cmta/crife.hpp"
#include "cmta/ecitfa.hpp"
#include "cmta/events.hpp"
#include "cmta/nn.hpp"

namespace cmta {

struct DeblurOutput {
  Var sharp;                    // 3 x H x W estimate of the target frame
  std::vector<Var> decoder;     // decoder features per level, finest first
};

struct ForwardTrace {
  int ctfa_calls = 0;
  std::vector<CtfaCall> calls;
};

class CmtaModel {
 public:
  explicit CmtaModel(const CMTAConfig& config);

  CmtaModel(const CmtaModel&) = delete;
  CmtaModel& operator=(const CmtaModel&) = delete;
  CmtaModel(CmtaModel&&) = default;
  CmtaModel& operator=(CmtaModel&&) = default;

  const CMTAConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  std::int64_t param_count() const { return store_.count(); }

  /// F(B)_k from a blurred frame.
  Var shallow_features(const Var& blur) const;
  /// G_k: CRIFE, or the concat + pointwise conv stand-in when disabled.
  Var fuse_frame(const Var& blur_feat, const Var& voxel) const;
  FeaturePyramid pyramid_encode(const Var& fused) const;
  FeaturePyramid event_pair_encode(const Var& grid_m, const Var& grid_m_plus_1) const;
  /// S_t = B_t + Conv5x5(decoder top level).
  DeblurOutput decode(const FeaturePyramid& aligned, const Var& blur_target) const;

  /// 2P+1 blurred frames (3 x H x W, H and W divisible by 4) with their
  /// voxel grids, target in the middle.
  DeblurOutput forward(std::span<const Var> blur_frames, std::span<const Var> voxels,
                       ForwardTrace* trace = nullptr) const;
  DeblurOutput forward(std::span<const Tensor> blur_frames, std::span<const EventStream> streams,
                       ForwardTrace* trace = nullptr) const;

  const Crife* crife() const { return crife_ ? &*crife_ : nullptr; }
  const Ecitfa* ecitfa() const { return ecitfa_ ? &*ecitfa_ : nullptr; }

  /// Parameter groups touched by one call of each encoder. Every call of an
  /// encoder references the same group.
  std::vector<Var> pyramid_encoder_parameters() const;
  std::vector<Var> event_pair_encoder_parameters() const;
  std::vector<Var> decoder_parameters() const;

  std::map<std::string, Tensor> state() const;
  /// Replaces parameter values; names and shapes must match exactly.
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  struct PyramidEncoder {
    ResBlock level0;
    ConvResBlock level1, level2;
    std::vector<Var> parameters() const;
  };

  CMTAConfig config_;
  ParameterStore store_;
  ConvResBlock shallow_;
  std::optional<Crife> crife_;
  std::optional<ConcatFusion> concat_;
  PyramidEncoder frame_encoder_;
  Conv2d event_stem_;
  PyramidEncoder event_encoder_;
  std::optional<Ecitfa> ecitfa_;
  ResBlock dec2_;
  Upsample2x up1_, up0_;
  Conv2d merge1_, merge0_;
  ResBlock dec1_, dec0_;
  Conv2d out_;
};

std::int64_t param_count(const CMTAConfig& config);

}  // namespace cmta
