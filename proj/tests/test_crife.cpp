// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "cmta/crife.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "doctest.h"

using namespace cmta;

namespace {

void zero_biases(ParameterStore& store) {
  for (const auto& name : store.names())
    if (name.ends_with(".bias")) store.get(name).mutable_value().fill(0.0);
}

CrifeOptions small_options(int n = 4) {
  CrifeOptions o;
  o.feature_channels = 8;
  o.slice_bins = 2;
  o.event_channels = 8;
  o.iterations = n;
  return o;
}

Var randn(std::mt19937_64& rng, const Shape& shape) { return Var(Tensor::normal(shape, rng)); }

}  // namespace

TEST_CASE("query encoder shapes") {
  ParameterStore store(1);
  Crife crife(store, "crife", small_options());
  std::mt19937_64 rng(1);
  const auto blur = randn(rng, {8, 8, 8});
  std::vector<Var> feats;
  for (int n = 0; n < 4; ++n) feats.push_back(randn(rng, {8, 8, 8}));
  const auto [q_cal, q0] = crife.encode_query(blur, feats);
  CHECK(store.get("crife.query_encoder.pointwise.weight").shape() == Shape{8, 40, 1, 1});
  CHECK(q_cal.shape() == Shape{8, 8, 8});
  CHECK(q0.q.shape() == Shape{4, 4, 4});
  CHECK(q0.iteration == 0);
  CHECK(q0.total == 4);
  CHECK(q0.alpha.value()[0] == 1.0);
}

TEST_CASE("query encoder is zero on zero input with zero biases") {
  ParameterStore store(2);
  Crife crife(store, "crife", small_options());
  zero_biases(store);
  const Var zero(Tensor({8, 8, 8}));
  const std::vector<Var> feats(4, zero);
  const auto [q_cal, q0] = crife.encode_query(zero, feats);
  CHECK(q_cal.value().abs_max() == 0.0);
  CHECK(q0.q.value().abs_max() == 0.0);
}

TEST_CASE("query encoder rejects mismatched event features") {
  ParameterStore store(3);
  Crife crife(store, "crife", small_options());
  std::vector<Var> feats(4, Var(Tensor({8, 8, 8})));
  feats[2] = Var(Tensor({8, 6, 8}));
  CHECK_THROWS_AS(crife.encode_query(Var(Tensor({8, 8, 8})), feats), ShapeError);
  CHECK_THROWS_AS(crife.encode_query(Var(Tensor({8, 8, 8})), std::span<const Var>()), ArgumentError);
}

TEST_CASE("key and value projection") {
  ParameterStore store(4);
  Crife crife(store, "crife", small_options());
  std::mt19937_64 rng(4);
  QueryState q{randn(rng, {4, 4, 4}), Var(Tensor::constant({1}, 1.0)), 0, 4};
  const auto [k, v] = crife.kv_project(q, randn(rng, {8, 4, 4}));
  CHECK(k.shape() == Shape{4, 4, 4});
  CHECK(v.shape() == Shape{4, 4, 4});
  CHECK_THROWS_AS(crife.kv_project(q, randn(rng, {8, 2, 4})), ShapeError);

  zero_biases(store);
  QueryState zq{Var(Tensor({4, 4, 4})), q.alpha, 0, 4};
  const auto [k0, v0] = crife.kv_project(zq, Var(Tensor({8, 4, 4})));
  CHECK(k0.value().abs_max() == 0.0);
  CHECK(v0.value().abs_max() == 0.0);
}

TEST_CASE("query update") {
  ParameterStore store(5);
  Crife crife(store, "crife", small_options(2));
  std::mt19937_64 rng(5);
  QueryState q{randn(rng, {4, 4, 4}), Var(Tensor::constant({1}, 1.0)), 0, 2};
  const auto attn = randn(rng, {4, 4, 4});

  store.zero("crife.mlp");
  auto next = crife.query_update(q, attn);
  Tensor sum = q.q.value();
  sum += attn.value();
  CHECK(next.q.value() == sum);
  CHECK(next.iteration == 1);

  ParameterStore store2(6);
  Crife crife2(store2, "crife", small_options(2));
  zero_biases(store2);
  const auto fixed = crife2.query_update(q, Var(Tensor({4, 4, 4})));
  CHECK(fixed.q.value() == q.q.value());

  q.iteration = 2;
  CHECK_THROWS_AS(crife.query_update(q, attn), StateError);
}

TEST_CASE("forward reduces to the skip path") {
  ParameterStore store(7);
  Crife crife(store, "crife", small_options());
  store.zero("crife.up");
  store.zero("crife.mlp");
  std::mt19937_64 rng(7);
  const auto blur = randn(rng, {8, 8, 8});
  const Var voxel(Tensor({8, 8, 8}));
  const auto g = crife.forward(blur, voxel);
  const auto [q_cal, q0] = crife.encode_query(blur, crife.extract_event_features(voxel));
  CHECK(g.value() == q_cal.value());
}

TEST_CASE("forward keeps spatial size for any slice count") {
  std::mt19937_64 rng(8);
  for (int n : {1, 2, 4, 8}) {
    ParameterStore store(8);
    Crife crife(store, "crife", small_options(n));
    const auto g = crife.forward(randn(rng, {8, 12, 8}), randn(rng, {2 * n, 12, 8}));
    CHECK(g.shape() == Shape{8, 12, 8});
  }
  ParameterStore store(9);
  Crife crife(store, "crife", small_options(4));
  CHECK_THROWS_AS(crife.forward(randn(rng, {8, 8, 8}), randn(rng, {6, 8, 8})), DivisibilityError);
  CHECK_THROWS_AS(crife.forward(randn(rng, {8, 8, 8}), randn(rng, {8, 4, 8})), ShapeError);
}

TEST_CASE("one attention pass per slice and rows sum to one") {
  std::mt19937_64 rng(10);
  for (int n : {1, 4}) {
    ParameterStore store(10);
    Crife crife(store, "crife", small_options(n));
    int calls = 0;
    double worst = 0.0;
    AttentionObserverScope scope([&](const Tensor& m) {
      ++calls;
      const auto c = m.dim(0);
      for (std::int64_t i = 0; i < c; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += m[i * c + j];
        worst = std::max(worst, std::abs(s - 1.0));
      }
    });
    crife.forward(randn(rng, {8, 8, 8}), randn(rng, {2 * n, 8, 8}));
    CHECK(calls == n);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("event extractor is shared across slices") {
  ParameterStore store(11);
  Crife crife(store, "crife", small_options(4));
  std::mt19937_64 rng(11);
  const auto voxel = randn(rng, {8, 8, 8});
  const auto feats = crife.extract_event_features(voxel);
  REQUIRE(feats.size() == 4);
  for (int n = 0; n < 4; ++n) {
    const Var slice(slice_channels(voxel.value(), 2 * n, 2 * n + 2));
    CHECK(crife.extractor()(slice).value() == feats[static_cast<std::size_t>(n)].value());
  }
  std::set<std::string> extractor_names;
  for (const auto& name : store.names())
    if (name.starts_with("crife.event_extractor")) extractor_names.insert(name);
  CHECK(extractor_names.size() == crife.extractor().parameters().size());

  ParameterStore store1(11), store8(11);
  Crife c1(store1, "crife", small_options(1)), c8(store8, "crife", small_options(8));
  CHECK(c1.extractor().parameters().size() == c8.extractor().parameters().size());
}

TEST_CASE("slice order matters") {
  ParameterStore store(12);
  Crife crife(store, "crife", small_options(4));
  std::mt19937_64 rng(12);
  const auto blur = randn(rng, {8, 8, 8});
  const Tensor voxel = Tensor::normal({8, 8, 8}, rng);
  std::vector<Tensor> parts;
  for (int n = 3; n >= 0; --n) parts.push_back(slice_channels(voxel, 2 * n, 2 * n + 2));
  const auto a = crife.forward(blur, Var(voxel));
  const auto b = crife.forward(blur, Var(concat_channels(parts)));
  CHECK(max_abs_diff(a.value(), b.value()) > 1e-6);
}

TEST_CASE("forward gradients match finite differences") {
  const auto r = gradient_check_block("crife_forward", 4, 1e-5, 0);
  CHECK(r.max_rel_error < 1e-3);
  CHECK(r.checked > 500);
}

TEST_CASE("concat fusion stand-in") {
  ParameterStore a(13), b(13);
  Crife crife(a, "crife", small_options());
  ConcatFusion concat(b, "fusion", small_options());
  std::mt19937_64 rng(13);
  const auto g = concat.forward(randn(rng, {8, 8, 8}), randn(rng, {8, 8, 8}));
  CHECK(g.shape() == Shape{8, 8, 8});
  CHECK(b.count() < a.count());
}
