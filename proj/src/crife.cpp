// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/crife.hpp"

#include "cmta/errors.hpp"

namespace cmta {

namespace {

void require_same_spatial(const Var& a, const Var& b, const char* what) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_chw(x, what);
  require_chw(y, what);
  if (x.height() != y.height() || x.width() != y.width())
    throw ShapeError(std::string(what) + ": spatial mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
}

std::vector<Var> slice_voxel(const Var& voxel, int parts) {
  require_chw(voxel.value(), "voxel");
  const auto bins = voxel.value().channels();
  if (parts < 1) throw ArgumentError("temporal slice count must be positive");
  if (bins % parts != 0)
    throw DivisibilityError(std::to_string(parts) + " slices do not divide " + std::to_string(bins) + " bins");
  const auto per = bins / parts;
  std::vector<Var> out;
  for (int n = 0; n < parts; ++n) out.push_back(ops::slice_channels(voxel, n * per, (n + 1) * per));
  return out;
}

}  // namespace

EventFeatureExtractor::EventFeatureExtractor(ParameterStore& store, const std::string& name, int in_channels,
                                             int out_channels)
    : conv_(store, name + ".conv", in_channels, out_channels, 3),
      res1_(store, name + ".res1", out_channels),
      res2_(store, name + ".res2", out_channels) {}

Var EventFeatureExtractor::operator()(const Var& slice) const { return res2_(res1_(conv_(slice))); }

std::vector<Var> EventFeatureExtractor::parameters() const {
  auto out = conv_.parameters();
  append(out, res1_.parameters());
  append(out, res2_.parameters());
  return out;
}

QueryEncoder::QueryEncoder(ParameterStore& store, const std::string& name, int feature_channels, int event_channels,
                           int slices, int query_channels)
    : pointwise_(store, name + ".pointwise", feature_channels + slices * event_channels, feature_channels, 1),
      reduce_(store, name + ".reduce", feature_channels, query_channels, false, 2),
      slices_(slices) {}

std::pair<Var, Var> QueryEncoder::operator()(const Var& blur_feat, std::span<const Var> event_feats) const {
  if (event_feats.empty()) throw ArgumentError("encode_query: no event features");
  if (static_cast<int>(event_feats.size()) != slices_)
    throw ShapeError("encode_query: expected " + std::to_string(slices_) + " event features, got " +
                     std::to_string(event_feats.size()));
  std::vector<Var> parts{blur_feat};
  for (const auto& e : event_feats) {
    require_same_spatial(blur_feat, e, "encode_query");
    parts.push_back(e);
  }
  Var q_cal = pointwise_(ops::concat_channels(parts));
  Var q0 = reduce_(q_cal);
  return {q_cal, q0};
}

std::vector<Var> QueryEncoder::parameters() const {
  auto out = pointwise_.parameters();
  append(out, reduce_.parameters());
  return out;
}

KvProjector::KvProjector(ParameterStore& store, const std::string& name, int query_channels, int event_channels)
    : fuse_(store, name + ".fuse", query_channels + event_channels, query_channels),
      key_(store, name + ".key", query_channels, query_channels, 1),
      value_(store, name + ".value", query_channels, query_channels, 1) {}

std::pair<Var, Var> KvProjector::operator()(const Var& query, const Var& event_feat) const {
  require_same_spatial(query, event_feat, "kv_project");
  const Var parts[] = {query, event_feat};
  Var kv = fuse_(ops::concat_channels(parts));
  return {key_(kv), value_(kv)};
}

std::vector<Var> KvProjector::parameters() const {
  auto out = fuse_.parameters();
  append(out, key_.parameters());
  append(out, value_.parameters());
  return out;
}

Crife::Crife(ParameterStore& store, const std::string& name, const CrifeOptions& options) : options_(options) {
  if (options.feature_channels < 2 || options.feature_channels % 2)
    throw ArgumentError("CRIFE feature width must be even");
  if (options.iterations < 1 || options.slice_bins < 1 || options.event_channels < 1)
    throw ArgumentError("CRIFE iterations, slice bins and event width must be positive");
  const int cq = query_channels();
  extractor_ = EventFeatureExtractor(store, name + ".event_extractor", options.slice_bins, options.event_channels);
  encoder_ = QueryEncoder(store, name + ".query_encoder", options.feature_channels, options.event_channels,
                          options.iterations, cq);
  kv_ = KvProjector(store, name + ".kv", cq, options.event_channels);
  mlp_ = PointwiseMlp(store, name + ".mlp", cq);
  up_ = Upsample2x(store, name + ".up", cq, options.feature_channels);
  alpha_ = store.create_constant(name + ".alpha", {1}, 1.0);
}

std::vector<Var> Crife::extract_event_features(const Var& voxel) const {
  auto slices = slice_voxel(voxel, options_.iterations);
  if (slices.front().value().channels() != options_.slice_bins)
    throw ShapeError("CRIFE expects " + std::to_string(options_.slice_bins * options_.iterations) +
                     " voxel bins, got " + std::to_string(voxel.value().channels()));
  std::vector<Var> feats;
  feats.reserve(slices.size());
  for (const auto& s : slices) feats.push_back(extractor_(s));
  return feats;
}

std::pair<Var, QueryState> Crife::encode_query(const Var& blur_feat, std::span<const Var> event_feats) const {
  auto [q_cal, q0] = encoder_(blur_feat, event_feats);
  return {q_cal, QueryState{q0, alpha_, 0, options_.iterations}};
}

std::pair<Var, Var> Crife::kv_project(const QueryState& query, const Var& event_feat) const {
  return kv_(query.q, event_feat);
}

QueryState Crife::query_update(const QueryState& query, const Var& attn) const {
  if (query.iteration >= query.total)
    throw StateError("query already received all " + std::to_string(query.total) + " updates");
  if (query.q.shape() != attn.shape())
    throw ShapeError("query_update: " + shape_str(query.q.shape()) + " vs " + shape_str(attn.shape()));
  const Var terms[] = {query.q, attn, mlp_(attn)};
  return QueryState{ops::add(terms), query.alpha, query.iteration + 1, query.total};
}

Var Crife::forward(const Var& blur_feat, const Var& voxel) const {
  require_same_spatial(blur_feat, voxel, "crife_forward");
  const auto feats = extract_event_features(voxel);
  auto [q_cal, state] = encode_query(blur_feat, feats);
  for (const auto& feat : feats) {
    const Var feat_q = ops::avg_pool2(feat);
    auto [k, v] = kv_project(state, feat_q);
    const Var attn = ops::transposed_attention(state.q, k, v, state.alpha, options_.normalize_attention);
    state = query_update(state, attn);
  }
  return ops::add(q_cal, up_(state.q));
}

std::vector<Var> Crife::parameters() const {
  auto out = extractor_.parameters();
  append(out, encoder_.parameters());
  append(out, kv_.parameters());
  append(out, mlp_.parameters());
  append(out, up_.parameters());
  out.push_back(alpha_);
  return out;
}

ConcatFusion::ConcatFusion(ParameterStore& store, const std::string& name, const CrifeOptions& options)
    : options_(options),
      extractor_(store, name + ".event_extractor", options.slice_bins, options.event_channels),
      pointwise_(store, name + ".pointwise", options.feature_channels + options.iterations * options.event_channels,
                 options.feature_channels, 1) {}

Var ConcatFusion::forward(const Var& blur_feat, const Var& voxel) const {
  require_same_spatial(blur_feat, voxel, "concat_fusion");
  std::vector<Var> parts{blur_feat};
  for (const auto& s : slice_voxel(voxel, options_.iterations)) parts.push_back(extractor_(s));
  return pointwise_(ops::concat_channels(parts));
}

std::vector<Var> ConcatFusion::parameters() const {
  auto out = extractor_.parameters();
  append(out, pointwise_.parameters());
  return out;
}

}  // namespace cmta
