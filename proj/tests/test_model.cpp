// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <functional>
#include <set>

#include "cmta/checkpoint.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "cmta/model.hpp"
#include "cmta/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cmta;

namespace {

CMTAConfig small_config() {
  CMTAConfig c;
  c.base_channels = 4;
  c.event_channels = 4;
  c.voxel_bins = 8;
  c.crife_iterations = 2;
  return c;
}

void zero_biases(ParameterStore& store) {
  for (const auto& name : store.names())
    if (name.ends_with(".bias")) store.get(name).mutable_value().fill(0.0);
}

struct Batch {
  std::vector<Var> frames, voxels;
};

Batch random_batch(std::mt19937_64& rng, const CMTAConfig& c, int h, int w) {
  Batch b;
  for (int k = 0; k < 2 * c.P + 1; ++k) {
    b.frames.emplace_back(Tensor::uniform({3, h, w}, rng, 0.0, 1.0));
    b.voxels.emplace_back(Tensor::normal({c.voxel_bins, h, w}, rng));
  }
  return b;
}

// Leaf nodes that carry parameters and are reachable from `root`.
std::set<const Node*> parameter_leaves(const Var& root) {
  std::set<const Node*> seen, leaves;
  std::function<void(const std::shared_ptr<Node>&)> visit = [&](const std::shared_ptr<Node>& n) {
    if (!seen.insert(n.get()).second) return;
    if (n->parents.empty() && n->requires_grad) leaves.insert(n.get());
    for (const auto& p : n->parents) visit(p);
  };
  visit(root.node());
  return leaves;
}

}  // namespace

TEST_CASE("pyramid encoder") {
  CMTAConfig c = small_config();
  CmtaModel m(c);
  std::mt19937_64 rng(1);
  const auto p = m.pyramid_encode(Var(Tensor::normal({4, 64, 64}, rng)));
  REQUIRE(p.size() == 3);
  CHECK(p[0].shape() == Shape{4, 64, 64});
  CHECK(p[1].shape() == Shape{8, 32, 32});
  CHECK(p[2].shape() == Shape{16, 16, 16});
  zero_biases(m.store());
  const auto z = m.pyramid_encode(Var(Tensor({4, 16, 16})));
  for (int s = 0; s < 3; ++s) CHECK(z[s].value().abs_max() == 0.0);
}

TEST_CASE("event-pair encoder") {
  CmtaModel m(small_config());
  std::mt19937_64 rng(2);
  const auto p = m.event_pair_encode(Var(Tensor::normal({8, 16, 8}, rng)), Var(Tensor::normal({8, 16, 8}, rng)));
  CHECK(p[0].shape() == Shape{4, 16, 8});
  CHECK(p[2].shape() == Shape{16, 4, 2});
  CHECK_THROWS_AS(m.event_pair_encode(Var(Tensor({8, 16, 8})), Var(Tensor({4, 16, 8}))), ShapeError);
  zero_biases(m.store());
  const auto z = m.event_pair_encode(Var(Tensor({8, 8, 8})), Var(Tensor({8, 8, 8})));
  for (int s = 0; s < 3; ++s) CHECK(z[s].value().abs_max() == 0.0);

  CMTAConfig off = small_config();
  off.enable_ecitfa = false;
  CmtaModel m2(off);
  CHECK_THROWS_AS(m2.event_pair_encode(Var(Tensor({8, 8, 8})), Var(Tensor({8, 8, 8}))), StateError);
}

TEST_CASE("decoder residual identity and connectivity") {
  CmtaModel m(small_config());
  std::mt19937_64 rng(3);
  FeaturePyramid aligned;
  for (int s = 0; s < 3; ++s) aligned.levels.emplace_back(Tensor::normal({4 << s, 16 >> s, 16 >> s}, rng));
  const Var blur(Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0));
  const auto out = m.decode(aligned, blur);
  CHECK(out.sharp.shape() == blur.shape());

  ops::weighted_sum(out.sharp, Tensor::normal({3, 16, 16}, rng)).backward();
  for (const auto& p : m.decoder_parameters()) {
    REQUIRE(p.has_grad());
    CHECK(p.grad().abs_max() > 0.0);
  }

  m.store().zero("decoder.out");
  CHECK(m.decode(aligned, blur).sharp.value() == blur.value());
  CHECK(gradient_check_block("decode", 4, 1e-5, 0).max_rel_error < 1e-3);
}

TEST_CASE("forward shapes for every ablation variant") {
  std::mt19937_64 rng(4);
  for (bool crife : {false, true})
    for (bool ecitfa : {false, true}) {
      CMTAConfig c = small_config();
      c.enable_crife = crife;
      c.enable_ecitfa = ecitfa;
      CmtaModel m(c);
      const auto b = random_batch(rng, c, 16, 12);
      const auto out = m.forward(b.frames, b.voxels);
      CHECK(out.sharp.shape() == Shape{3, 16, 12});
      CHECK(out.sharp.value().all_finite());
    }
}

TEST_CASE("default configuration on 64x64 frames") {
  CmtaModel m(CMTAConfig{});
  std::mt19937_64 rng(5);
  NoGradGuard no_grad;
  const auto b = random_batch(rng, m.config(), 64, 64);
  ForwardTrace trace;
  const auto out = m.forward(b.frames, b.voxels, &trace);
  CHECK(out.sharp.shape() == Shape{3, 64, 64});
  CHECK(trace.ctfa_calls == 9);
}

TEST_CASE("forward is deterministic") {
  CmtaModel m(small_config());
  std::mt19937_64 rng(6);
  const auto b = random_batch(rng, m.config(), 8, 8);
  NoGradGuard no_grad;
  CHECK(m.forward(b.frames, b.voxels).sharp.value() == m.forward(b.frames, b.voxels).sharp.value());
}

TEST_CASE("zeroed output conv returns the blurred target") {
  CmtaModel m(small_config());
  m.store().zero("decoder.out");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const auto b = random_batch(rng, m.config(), 8, 8);
    CHECK(m.forward(b.frames, b.voxels).sharp.value() == b.frames[2].value());
  }
}

TEST_CASE("forward input errors") {
  CmtaModel m(small_config());
  std::mt19937_64 rng(8);
  auto b = random_batch(rng, m.config(), 8, 8);
  CHECK_THROWS_AS(m.forward(std::span(b.frames).first(4), std::span(b.voxels).first(4)), ArgumentError);
  CHECK_THROWS_AS(m.forward(b.frames, std::span(b.voxels).first(4)), ArgumentError);
  auto odd = random_batch(rng, m.config(), 6, 8);
  CHECK_THROWS_AS(m.forward(odd.frames, odd.voxels), ShapeError);

  std::vector<Tensor> frames;
  std::vector<EventStream> streams;
  for (int k = 0; k < 5; ++k) {
    frames.push_back(Tensor({3, 8, 8}));
    EventStream s;
    s.window = {k * 1.0, k + 1.0, k};
    s.height = s.width = 8;
    streams.push_back(s);
  }
  CHECK(m.forward(frames, streams).sharp.shape() == Shape{3, 8, 8});
  std::swap(streams[1], streams[2]);
  CHECK_THROWS_AS(m.forward(frames, streams), OrderingError);
}

TEST_CASE("parameters are shared across frames and pairs") {
  for (int P : {1, 2, 3}) {
    CMTAConfig c = small_config();
    c.P = P;
    CmtaModel m(c);
    std::mt19937_64 rng(9);
    const auto b = random_batch(rng, c, 8, 8);
    const auto leaves = parameter_leaves(m.forward(b.frames, b.voxels).sharp);
    std::set<const Node*> params;
    for (const auto& p : m.store().parameters()) params.insert(p.id());
    for (const Node* leaf : leaves) CHECK(params.count(leaf) == 1);
    CHECK(leaves.size() == params.size());
  }
  CMTAConfig five = CMTAConfig{}, seven = CMTAConfig{};
  seven.P = 3;
  CHECK(param_count(five) == param_count(seven));
}

TEST_CASE("parameter counts") {
  auto variant = [](bool crife, bool ecitfa) {
    CMTAConfig c;
    c.enable_crife = crife;
    c.enable_ecitfa = ecitfa;
    return param_count(c);
  };
  const auto v1 = variant(false, false), v2 = variant(true, false), v3 = variant(false, true), v4 = variant(true, true);
  CHECK(v4 > v3);
  CHECK(v3 > v1);
  CHECK(v2 > v1);
  CHECK(v4 - v3 > 0);
  CHECK(v4 - v3 < v3 - v1);
  CMTAConfig wide;
  wide.base_channels = 32;
  CHECK(param_count(wide) > param_count(CMTAConfig{}));
  CHECK(param_count(CMTAConfig{}) == CmtaModel(CMTAConfig{}).param_count());
  CHECK(param_count(CMTAConfig{}) == param_count(CMTAConfig{}));
}

TEST_CASE("configuration validation") {
  CMTAConfig c;
  c.crife_iterations = 3;
  CHECK_THROWS_AS(c.validate(), DivisibilityError);
  c = CMTAConfig{};
  c.P = 0;
  CHECK_THROWS_AS(CmtaModel{c}, ArgumentError);
  c = CMTAConfig{};
  c.scales = 4;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("config text round trip") {
  ConfigFile f;
  f.model.P = 3;
  f.model.base_channels = 8;
  f.model.enable_crife = false;
  f.model.init_seed = 42;
  f.train.lr = 3e-4;
  f.train.crop = 32;
  f.train.flip = false;
  const auto back = parse_config(format_config(f));
  CHECK(back.model == f.model);
  CHECK(back.train == f.train);
  CHECK(parse_config("# comment\n\nP = 1\n").model.P == 1);
  try {
    parse_config("P=2\nbogus=1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_config("P=two\n"), ParseError);
  CHECK_THROWS_AS(parse_config("enable_crife=maybe\n"), ParseError);
  CHECK_THROWS_AS(parse_config("P\n"), ParseError);
}

TEST_CASE("checkpoint round trip") {
  CmtaModel m(small_config());
  std::mt19937_64 rng(10);
  for (auto& p : m.store().parameters()) p.mutable_value() = Tensor::normal(p.shape(), rng);
  const auto dir = cmta::testing::temp_dir("ckpt");
  save_checkpoint(make_checkpoint(m, 17), dir / "m.ckpt");
  const auto ck = load_checkpoint(dir / "m.ckpt");
  CHECK(ck.step == 17);
  CHECK(ck.config == m.config());
  const auto m2 = model_from_checkpoint(ck);
  for (const auto& name : m.store().names()) CHECK(m2.store().get(name).value() == m.store().get(name).value());

  CMTAConfig other = small_config();
  other.base_channels = 6;
  CmtaModel m3(other);
  CHECK_THROWS_AS(restore(m3, ck), ArgumentError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  {
    std::ofstream bad(dir / "bad.ckpt");
    bad << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
}

TEST_CASE("neighbourhood replicates sequence edges") {
  CHECK(neighbourhood(0, 2, 10) == std::vector<int>{0, 0, 0, 1, 2});
  CHECK(neighbourhood(5, 2, 10) == std::vector<int>{3, 4, 5, 6, 7});
  CHECK(neighbourhood(9, 2, 10) == std::vector<int>{7, 8, 9, 9, 9});
  CHECK(neighbourhood(0, 1, 1) == std::vector<int>{0, 0, 0});
  CHECK_THROWS_AS(neighbourhood(10, 2, 10), RangeError);
}
