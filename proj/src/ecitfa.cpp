// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/ecitfa.hpp"

#include <map>

#include "cmta/errors.hpp"

namespace cmta {

void validate_pyramid(const FeaturePyramid& pyramid, const char* what) {
  if (pyramid.size() != kPyramidLevels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(kPyramidLevels) + " levels, got " +
                     std::to_string(pyramid.size()));
  for (int s = 0; s < kPyramidLevels; ++s) {
    if (!pyramid[s].defined()) throw ShapeError(std::string(what) + ": missing level " + std::to_string(s));
    require_chw(pyramid[s].value(), what);
  }
  for (int s = 1; s < kPyramidLevels; ++s) {
    const Tensor& fine = pyramid[s - 1].value();
    const Tensor& coarse = pyramid[s].value();
    if (fine.height() != 2 * coarse.height() || fine.width() != 2 * coarse.width())
      throw ShapeError(std::string(what) + ": levels " + std::to_string(s - 1) + " and " + std::to_string(s) +
                       " are not dyadic");
  }
}

DynamicFilter make_dynamic_filter(Var weights, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ArgumentError("dynamic filter kernel size must be odd");
  require_chw(weights.value(), "dynamic filter");
  if (weights.value().channels() != kernel_size * kernel_size)
    throw ShapeError("dynamic filter needs " + std::to_string(kernel_size * kernel_size) + " taps per pixel");
  return DynamicFilter{std::move(weights), kernel_size};
}

Var apply_dynamic_filter(const DynamicFilter& filter, const Var& features) {
  return ops::dynamic_filter(filter.weights, features, filter.kernel_size);
}

Ctfa::Ctfa(ParameterStore& store, const std::string& name, int channels, int kernel_size, bool has_hidden,
           bool normalize_attention)
    : channels_(channels),
      kernel_size_(kernel_size),
      has_hidden_(has_hidden),
      normalize_attention_(normalize_attention),
      fuse_(store, name + ".fuse", has_hidden ? 2 * channels : channels, channels, true),
      forward_group_(store, name + ".group_fwd", 3 * channels, channels),
      backward_group_(store, name + ".group_bwd", 3 * channels, channels),
      merge_(store, name + ".merge", 2 * channels, channels),
      filter_gen_(store, name + ".filter", channels, kernel_size * kernel_size),
      wq_(store, name + ".wq", channels),
      wk_(store, name + ".wk", channels),
      wv_(store, name + ".wv", channels),
      mlp_(store, name + ".mlp", channels),
      alpha_(store.create_constant(name + ".alpha", {1}, 1.0)) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ArgumentError("dynamic filter kernel size must be odd");
}

Var Ctfa::fuse_hidden(const Var& frame_feat, const std::optional<Var>& hidden) const {
  require_chw(frame_feat.value(), "fuse_hidden");
  if (frame_feat.value().channels() != channels_)
    throw ShapeError("fuse_hidden: frame feature has " + std::to_string(frame_feat.value().channels()) +
                     " channels, block expects " + std::to_string(channels_));
  if (!has_hidden_) {
    if (hidden) throw StateError("fuse_hidden: the coarsest level has no hidden state");
    return fuse_(frame_feat);
  }
  if (!hidden) throw ArgumentError("fuse_hidden: hidden state required below the coarsest level");
  if (hidden->shape() != frame_feat.shape())
    throw ShapeError("fuse_hidden: hidden " + shape_str(hidden->shape()) + " vs frame " +
                     shape_str(frame_feat.shape()));
  const Var parts[] = {frame_feat, *hidden};
  return fuse_(ops::concat_channels(parts));
}

Var Ctfa::aggregate_temporal(const Var& prev, const Var& cur, const Var& next, const Var& ev_fwd,
                             const Var& ev_bwd) const {
  for (const Var* v : {&prev, &next, &ev_fwd, &ev_bwd})
    if (v->shape() != cur.shape())
      throw ShapeError("aggregate_temporal: " + shape_str(v->shape()) + " vs " + shape_str(cur.shape()));
  const Var fwd_in[] = {prev, cur, ev_fwd};
  const Var bwd_in[] = {cur, next, ev_bwd};
  const Var merged[] = {forward_group_(ops::concat_channels(fwd_in)), backward_group_(ops::concat_channels(bwd_in))};
  return merge_(ops::concat_channels(merged));
}

DynamicFilter Ctfa::generate_dynamic_filter(const Var& temporal) const {
  return make_dynamic_filter(filter_gen_(temporal), kernel_size_);
}

Var Ctfa::attention_fuse(const Var& fused, const Var& filtered) const {
  if (fused.shape() != filtered.shape())
    throw ShapeError("attention_fuse: " + shape_str(fused.shape()) + " vs " + shape_str(filtered.shape()));
  const Var a =
      ops::transposed_attention(wq_(fused), wk_(filtered), wv_(filtered), alpha_, normalize_attention_);
  return ops::add(mlp_(a), a);
}

Var Ctfa::operator()(const Var& prev, const Var& cur, const Var& next, const std::optional<Var>& hidden,
                     const Var& ev_a, const Var& ev_b) const {
  const Var fused = fuse_hidden(cur, hidden);
  const Var temporal = aggregate_temporal(prev, cur, next, ev_a, ev_b);
  const Var filtered = apply_dynamic_filter(generate_dynamic_filter(temporal), temporal);
  return attention_fuse(fused, filtered);
}

std::vector<Var> Ctfa::parameters() const {
  std::vector<Var> out;
  for (const auto* b : {&fuse_, &forward_group_, &backward_group_, &merge_, &filter_gen_}) append(out, b->parameters());
  for (const auto* p : {&wq_, &wk_, &wv_}) append(out, p->parameters());
  append(out, mlp_.parameters());
  out.push_back(alpha_);
  return out;
}

Ecitfa::Ecitfa(ParameterStore& store, const std::string& name, int base_channels, int kernel_size,
               bool normalize_attention) {
  for (int s = 0; s < kPyramidLevels; ++s)
    blocks_[static_cast<std::size_t>(s)] = Ctfa(store, name + ".ctfa" + std::to_string(s), base_channels << s,
                                                kernel_size, s + 1 < kPyramidLevels, normalize_attention);
  for (int s = 0; s + 1 < kPyramidLevels; ++s)
    up_[static_cast<std::size_t>(s)] =
        Upsample2x(store, name + ".hidden_up" + std::to_string(s), base_channels << (s + 1), base_channels << s);
}

Var Ecitfa::upsample_hidden(int level, const Var& coarser_aligned) const {
  if (level < 0) throw ArgumentError("upsample_hidden: negative level");
  if (level >= kPyramidLevels - 1) throw StateError("upsample_hidden: the coarsest level has no hidden state");
  return up_[static_cast<std::size_t>(level)](coarser_aligned);
}

CascadeResult Ecitfa::cascade_align(std::span<const FeaturePyramid> frames,
                                    std::span<const FeaturePyramid> events) const {
  if (frames.size() < 3 || frames.size() % 2 == 0)
    throw ArgumentError("cascade_align needs 2P+1 frame pyramids with P >= 1, got " + std::to_string(frames.size()));
  const int P = static_cast<int>(frames.size() / 2);
  if (static_cast<int>(events.size()) != 2 * P)
    throw ArgumentError("cascade_align needs " + std::to_string(2 * P) + " event-pair pyramids, got " +
                        std::to_string(events.size()));
  for (const auto& f : frames) validate_pyramid(f, "frame pyramid");
  for (const auto& e : events) validate_pyramid(e, "event pyramid");

  auto frame = [&](int offset, int s) -> const Var& { return frames[static_cast<std::size_t>(offset + P)][s]; };
  // Pair pyramid spanning offsets (o, o + 1).
  auto pair = [&](int o, int s) -> const Var& { return events[static_cast<std::size_t>(o + P)][s]; };

  CascadeResult result;
  result.target.levels.resize(kPyramidLevels);
  std::map<int, Var> hidden;  // offset -> h at the current level
  for (int s = kPyramidLevels - 1; s >= 0; --s) {
    const Ctfa& ctfa = blocks_[static_cast<std::size_t>(s)];
    std::map<int, Var> aligned;
    auto hidden_for = [&](int o) -> std::optional<Var> {
      if (s == kPyramidLevels - 1) return std::nullopt;
      return hidden.at(o);
    };
    auto aligned_or_raw = [&](int o) -> Var {
      auto it = aligned.find(o);
      return it != aligned.end() ? it->second : frame(o, s);
    };

    for (int r = P - 1; r >= 1; --r) {
      const int left = -r, right = r;
      aligned[left] = ctfa(frame(left + 1, s), frame(left, s), aligned_or_raw(left - 1), hidden_for(left),
                           pair(left - 1, s), pair(left, s));
      result.calls.push_back({s, left, &ctfa});
      aligned[right] = ctfa(frame(right - 1, s), frame(right, s), aligned_or_raw(right + 1), hidden_for(right),
                            pair(right, s), pair(right - 1, s));
      result.calls.push_back({s, right, &ctfa});
    }
    aligned[0] = ctfa(aligned_or_raw(-1), frame(0, s), aligned_or_raw(1), hidden_for(0), pair(-1, s), pair(0, s));
    result.calls.push_back({s, 0, &ctfa});
    result.target.levels[static_cast<std::size_t>(s)] = aligned.at(0);

    if (s > 0) {
      hidden.clear();
      for (const auto& [o, f] : aligned) hidden[o] = upsample_hidden(s - 1, f);
    }
  }
  return result;
}

std::vector<Var> Ecitfa::parameters() const {
  std::vector<Var> out;
  for (const auto& b : blocks_) append(out, b.parameters());
  for (const auto& u : up_) append(out, u.parameters());
  return out;
}

}  // namespace cmta
