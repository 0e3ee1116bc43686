// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal recurrent intra-frame feature enhancement.
//
// A blurred-frame feature map is fused with N event feature maps, one per
// temporal slice of the frame's voxel grid. A half-resolution query is
// refined N times by channel cross-attention against keys and values built
// from the query and the n-th event slice; the refined query is upsampled
// back and added to the full-resolution fused feature.

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cmta/autograd.hpp"
#include "cmta/nn.hpp"

namespace cmta {

struct CrifeOptions {
  int feature_channels = 16;  // width of F(B), Q_cal and the output
  int slice_bins = 4;         // voxel bins per temporal slice (C / N)
  int event_channels = 8;     // width of F(E)^n
  int iterations = 4;         // N
  bool normalize_attention = true;
};

/// Recurrent query: the running feature, its attention temperature, and how
/// many of the N updates have been applied.
struct QueryState {
  Var q;
  Var alpha;
  int iteration = 0;
  int total = 0;
};

/// Weight-shared extractor applied to every temporal slice: a 3x3 conv and
/// two residual blocks.
class EventFeatureExtractor {
 public:
  EventFeatureExtractor() = default;
  EventFeatureExtractor(ParameterStore& store, const std::string& name, int in_channels, int out_channels);

  Var operator()(const Var& slice) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d conv_;
  ResBlock res1_, res2_;
};

/// Q_cal = pointwise(F(B) || F(E)^0 .. F(E)^{N-1});  Q^0 = F_R(Q_cal).
class QueryEncoder {
 public:
  QueryEncoder() = default;
  QueryEncoder(ParameterStore& store, const std::string& name, int feature_channels, int event_channels, int slices,
               int query_channels);

  /// Returns (Q_cal, Q^0 as an unnormalised feature map).
  std::pair<Var, Var> operator()(const Var& blur_feat, std::span<const Var> event_feats) const;
  std::vector<Var> parameters() const;

 private:
  Conv2d pointwise_;
  ConvResBlock reduce_;  // stride-2 3x3 conv + residual block
  int slices_ = 0;
};

/// KV = ResBlocks(Q^n || F(E)^n);  K = W_K(KV),  V = W_V(KV).
class KvProjector {
 public:
  KvProjector() = default;
  KvProjector(ParameterStore& store, const std::string& name, int query_channels, int event_channels);

  std::pair<Var, Var> operator()(const Var& query, const Var& event_feat) const;
  std::vector<Var> parameters() const;

 private:
  ConvResBlock fuse_;
  Conv2d key_, value_;
};

class Crife {
 public:
  Crife() = default;
  Crife(ParameterStore& store, const std::string& name, const CrifeOptions& options);

  const CrifeOptions& options() const { return options_; }
  int query_channels() const { return options_.feature_channels / 2; }

  /// F(E)^n for each temporal slice of a C x H x W voxel tensor.
  std::vector<Var> extract_event_features(const Var& voxel) const;

  /// (Q_cal, Q^0).
  std::pair<Var, QueryState> encode_query(const Var& blur_feat, std::span<const Var> event_feats) const;
  /// Keys and values for one iteration; `event_feat` must already be at
  /// query resolution.
  std::pair<Var, Var> kv_project(const QueryState& query, const Var& event_feat) const;
  /// Q^{n+1} = Q^n + Attn + MLP(Attn). Throws StateError after N updates.
  QueryState query_update(const QueryState& query, const Var& attn) const;

  /// G = Q_cal + Dconv4x4(Q^N). `voxel` has N * slice_bins channels.
  Var forward(const Var& blur_feat, const Var& voxel) const;

  const EventFeatureExtractor& extractor() const { return extractor_; }
  std::vector<Var> parameters() const;

 private:
  CrifeOptions options_;
  EventFeatureExtractor extractor_;
  QueryEncoder encoder_;
  KvProjector kv_;
  PointwiseMlp mlp_;
  Upsample2x up_;
  Var alpha_;
};

/// Ablation stand-in: a single pointwise conv over F(B) || {F(E)^n}.
class ConcatFusion {
 public:
  ConcatFusion() = default;
  ConcatFusion(ParameterStore& store, const std::string& name, const CrifeOptions& options);

  Var forward(const Var& blur_feat, const Var& voxel) const;
  std::vector<Var> parameters() const;

 private:
  CrifeOptions options_;
  EventFeatureExtractor extractor_;
  Conv2d pointwise_;
};

}  // namespace cmta
