// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/model.hpp"

#include <algorithm>

#include "cmta/errors.hpp"

namespace cmta {

std::vector<Var> CmtaModel::PyramidEncoder::parameters() const {
  auto out = level0.parameters();
  append(out, level1.parameters());
  append(out, level2.parameters());
  return out;
}

CmtaModel::CmtaModel(const CMTAConfig& config) : config_(config), store_(config.init_seed) {
  config_.validate();
  const int b = config_.base_channels;
  shallow_ = ConvResBlock(store_, "shallow", 3, b);

  CrifeOptions copt;
  copt.feature_channels = b;
  copt.slice_bins = config_.voxel_bins / config_.crife_iterations;
  copt.event_channels = config_.event_channels;
  copt.iterations = config_.crife_iterations;
  copt.normalize_attention = config_.normalize_attention;
  if (config_.enable_crife) {
    crife_.emplace(store_, "crife", copt);
  } else {
    concat_.emplace(store_, "fusion", copt);
  }

  frame_encoder_ = PyramidEncoder{ResBlock(store_, "frame_encoder.level0", b),
                                  ConvResBlock(store_, "frame_encoder.level1", b, 2 * b, false, 2),
                                  ConvResBlock(store_, "frame_encoder.level2", 2 * b, 4 * b, false, 2)};
  if (config_.enable_ecitfa) {
    event_stem_ = Conv2d(store_, "event_encoder.stem", 2 * config_.voxel_bins, b, 3);
    event_encoder_ = PyramidEncoder{ResBlock(store_, "event_encoder.level0", b),
                                    ConvResBlock(store_, "event_encoder.level1", b, 2 * b, false, 2),
                                    ConvResBlock(store_, "event_encoder.level2", 2 * b, 4 * b, false, 2)};
    ecitfa_.emplace(store_, "ecitfa", b, config_.dynamic_kernel, config_.normalize_attention);
  }

  dec2_ = ResBlock(store_, "decoder.level2", 4 * b);
  up1_ = Upsample2x(store_, "decoder.up1", 4 * b, 2 * b);
  merge1_ = Conv2d(store_, "decoder.merge1", 4 * b, 2 * b, 1);
  dec1_ = ResBlock(store_, "decoder.level1", 2 * b);
  up0_ = Upsample2x(store_, "decoder.up0", 2 * b, b);
  merge0_ = Conv2d(store_, "decoder.merge0", 2 * b, b, 1);
  dec0_ = ResBlock(store_, "decoder.level0", b);
  out_ = Conv2d(store_, "decoder.out", b, 3, 5);
}

Var CmtaModel::shallow_features(const Var& blur) const { return shallow_(blur); }

Var CmtaModel::fuse_frame(const Var& blur_feat, const Var& voxel) const {
  return crife_ ? crife_->forward(blur_feat, voxel) : concat_->forward(blur_feat, voxel);
}

FeaturePyramid CmtaModel::pyramid_encode(const Var& fused) const {
  FeaturePyramid p;
  p.levels.push_back(frame_encoder_.level0(fused));
  p.levels.push_back(frame_encoder_.level1(p.levels[0]));
  p.levels.push_back(frame_encoder_.level2(p.levels[1]));
  return p;
}

FeaturePyramid CmtaModel::event_pair_encode(const Var& grid_m, const Var& grid_m_plus_1) const {
  if (!ecitfa_) throw StateError("event-pair encoder is disabled with enable_ecitfa=false");
  if (grid_m.shape() != grid_m_plus_1.shape())
    throw ShapeError("event_pair_encode: " + shape_str(grid_m.shape()) + " vs " + shape_str(grid_m_plus_1.shape()));
  const Var pair[] = {grid_m, grid_m_plus_1};
  FeaturePyramid p;
  p.levels.push_back(event_encoder_.level0(event_stem_(ops::concat_channels(pair))));
  p.levels.push_back(event_encoder_.level1(p.levels[0]));
  p.levels.push_back(event_encoder_.level2(p.levels[1]));
  return p;
}

DeblurOutput CmtaModel::decode(const FeaturePyramid& aligned, const Var& blur_target) const {
  validate_pyramid(aligned, "decode");
  require_chw(blur_target.value(), "decode");
  DeblurOutput out;
  const Var d2 = dec2_(aligned[2]);
  const Var in1[] = {up1_(d2), aligned[1]};
  const Var d1 = dec1_(merge1_(ops::concat_channels(in1)));
  const Var in0[] = {up0_(d1), aligned[0]};
  const Var d0 = dec0_(merge0_(ops::concat_channels(in0)));
  const Var residual = out_(d0);
  if (residual.shape() != blur_target.shape())
    throw ShapeError("decode: output " + shape_str(residual.shape()) + " does not match frame " +
                     shape_str(blur_target.shape()));
  out.sharp = ops::add(blur_target, residual);
  out.decoder = {d0, d1, d2};
  return out;
}

DeblurOutput CmtaModel::forward(std::span<const Var> blur_frames, std::span<const Var> voxels,
                                ForwardTrace* trace) const {
  const auto expected = static_cast<std::size_t>(2 * config_.P + 1);
  if (blur_frames.size() != expected)
    throw ArgumentError("forward expects " + std::to_string(expected) + " frames, got " +
                        std::to_string(blur_frames.size()));
  if (voxels.size() != blur_frames.size()) throw ArgumentError("forward: one voxel grid per frame required");
  const Shape frame_shape = blur_frames[0].shape();
  if (frame_shape.size() != 3 || frame_shape[0] != 3) throw ShapeError("frames must be 3 x H x W");
  if (frame_shape[1] % 4 || frame_shape[2] % 4)
    throw ShapeError("frame height and width must be divisible by 4, got " + shape_str(frame_shape));
  for (std::size_t k = 0; k < blur_frames.size(); ++k) {
    if (blur_frames[k].shape() != frame_shape) throw ShapeError("forward: frames differ in shape");
    const Shape& vs = voxels[k].shape();
    if (vs.size() != 3 || vs[0] != config_.voxel_bins || vs[1] != frame_shape[1] || vs[2] != frame_shape[2])
      throw ShapeError("forward: voxel grid " + shape_str(vs) + " does not match " +
                       std::to_string(config_.voxel_bins) + " bins at frame size");
  }

  const int P = config_.P;
  auto encode_frame = [&](std::size_t k) {
    return pyramid_encode(fuse_frame(shallow_features(blur_frames[k]), voxels[k]));
  };

  FeaturePyramid aligned;
  if (ecitfa_) {
    std::vector<FeaturePyramid> frames;
    for (std::size_t k = 0; k < blur_frames.size(); ++k) frames.push_back(encode_frame(k));
    std::vector<FeaturePyramid> pairs;
    for (std::size_t m = 0; m + 1 < voxels.size(); ++m) pairs.push_back(event_pair_encode(voxels[m], voxels[m + 1]));
    auto cascade = ecitfa_->cascade_align(frames, pairs);
    if (trace) {
      trace->ctfa_calls = static_cast<int>(cascade.calls.size());
      trace->calls = cascade.calls;
    }
    aligned = std::move(cascade.target);
  } else {
    // Without alignment only the target pyramid reaches the decoder.
    aligned = encode_frame(static_cast<std::size_t>(P));
    if (trace) *trace = ForwardTrace{};
  }
  return decode(aligned, blur_frames[static_cast<std::size_t>(P)]);
}

DeblurOutput CmtaModel::forward(std::span<const Tensor> blur_frames, std::span<const EventStream> streams,
                                ForwardTrace* trace) const {
  if (streams.size() != blur_frames.size()) throw ArgumentError("forward: one event stream per frame required");
  std::vector<Var> frames, voxels;
  for (std::size_t k = 0; k < blur_frames.size(); ++k) {
    const Tensor& f = blur_frames[k];
    require_chw(f, "forward");
    if (streams[k].height != f.height() || streams[k].width != f.width())
      throw ShapeError("event stream sensor size does not match frame " + shape_str(f.shape()));
    // Replicated edge frames repeat their window verbatim.
    if (k > 0 && !(streams[k].window == streams[k - 1].window) &&
        streams[k].window.t_start < streams[k - 1].window.t_end)
      throw OrderingError("exposure windows must be ordered and non-overlapping");
    frames.emplace_back(f);
    voxels.emplace_back(build_voxel_grid(streams[k], config_.voxel_bins, static_cast<int>(f.height()),
                                         static_cast<int>(f.width()))
                            .data);
  }
  return forward(frames, voxels, trace);
}

std::vector<Var> CmtaModel::pyramid_encoder_parameters() const { return frame_encoder_.parameters(); }

std::vector<Var> CmtaModel::event_pair_encoder_parameters() const {
  if (!ecitfa_) return {};
  auto out = event_stem_.parameters();
  append(out, event_encoder_.parameters());
  return out;
}

std::vector<Var> CmtaModel::decoder_parameters() const {
  std::vector<Var> out;
  append(out, dec2_.parameters());
  append(out, up1_.parameters());
  append(out, merge1_.parameters());
  append(out, dec1_.parameters());
  append(out, up0_.parameters());
  append(out, merge0_.parameters());
  append(out, dec0_.parameters());
  append(out, out_.parameters());
  return out;
}

std::map<std::string, Tensor> CmtaModel::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& name : store_.names()) out.emplace(name, store_.get(name).value());
  return out;
}

void CmtaModel::load_state(const std::map<std::string, Tensor>& state) {
  if (state.size() != store_.names().size())
    throw ArgumentError("state has " + std::to_string(state.size()) + " tensors, model has " +
                        std::to_string(store_.names().size()));
  for (const auto& name : store_.names()) {
    auto it = state.find(name);
    if (it == state.end()) throw ArgumentError("state is missing parameter " + name);
    Var p = store_.get(name);
    if (it->second.shape() != p.shape())
      throw ShapeError("parameter " + name + ": " + shape_str(it->second.shape()) + " vs " + shape_str(p.shape()));
  }
  for (const auto& name : store_.names()) store_.get(name).mutable_value() = state.at(name);
}

std::int64_t param_count(const CMTAConfig& config) { return CmtaModel(config).param_count(); }

}  // namespace cmta
