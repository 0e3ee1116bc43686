// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <sstream>

#include "cmta/checkpoint.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "cmta/metrics.hpp"
#include "cmta/train.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cmta;
using cmta::testing::constant_image;

namespace fs = std::filesystem;

namespace {

CMTAConfig tiny_config() {
  CMTAConfig c;
  c.base_channels = 4;
  c.event_channels = 4;
  c.voxel_bins = 8;
  c.crife_iterations = 2;
  return c;
}

const fs::path& tiny_dataset() {
  static const fs::path root = [] {
    const auto dir = cmta::testing::temp_dir("harness_data");
    write_sharp_sequence(render_moving_texture(16, 16, 42, 4), dir / "sharp" / "seq");
    SynthOptions opt;
    opt.seed = 2;
    build_dataset(dir / "sharp", dir / "data", opt);
    return dir / "data";
  }();
  return root;
}

TrainOptions tiny_options(int steps) {
  TrainOptions o;
  o.steps = steps;
  o.settings.crop = 8;
  o.settings.seed = 5;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("psnr") {
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0), b = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(constant_image(0.5, 4, 4), constant_image(0.0, 4, 4)) == doctest::Approx(6.0206).epsilon(1e-5));
  CHECK(psnr(constant_image(0.5, 4, 4), constant_image(0.0, 4, 4)) == doctest::Approx(10.0 * std::log10(4.0)));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Tensor({3, 8, 7})), ShapeError);
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(2);
  const Tensor a = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
  Tensor neg = a;
  for (auto& v : neg.values()) v = 1.0 - v;
  CHECK(ssim(a, neg) < 1.0);
  const double c1 = 0.01 * 0.01, m1 = 0.3, m2 = 0.7;
  const double closed = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
  CHECK(std::abs(ssim(constant_image(m1, 12, 12), constant_image(m2, 12, 12)) - closed) < 1e-6);
  CHECK(std::abs(ssim(constant_image(m1, 12, 12, 1), constant_image(m2, 12, 12, 1)) - closed) < 1e-6);
  CHECK_THROWS_AS(ssim(a, Tensor({3, 16, 15})), ShapeError);
}

TEST_CASE("mean absolute error") {
  CHECK(mean_abs_error(constant_image(1.0, 2, 2), constant_image(0.0, 2, 2)) == 1.0);
  CHECK(mean_abs_error(constant_image(0.3, 2, 2), constant_image(0.3, 2, 2)) == 0.0);
}

TEST_CASE("metrics report") {
  MetricsReport r;
  r.add({"a", 30.0, 0.9, 20.0, 0.5});
  r.add({"b", 40.0, 0.7, 22.0, 0.7});
  CHECK(r.mean_psnr == 35.0);
  CHECK(r.mean_ssim == doctest::Approx(0.8));
  CHECK(r.mean_blur_psnr == 21.0);
  const auto text = r.format();
  CHECK(text.find("a 30.0000 0.900000\n") != std::string::npos);
  CHECK(text.find("mean 35.0000 0.800000\n") != std::string::npos);
  CHECK(text.rfind("mean", std::string::npos) > text.find("b 40"));

  MetricsReport self;
  std::mt19937_64 rng(3);
  const Tensor gt = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
  self.add({"gt", psnr(gt, gt), ssim(gt, gt), 0.0, 0.0});
  CHECK(self.mean_psnr == kPsnrCap);
  CHECK(self.mean_ssim == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1e-4, 1e-6) == 1e-4);
  CHECK(cosine_lr(100, 100, 1e-4, 1e-6) == doctest::Approx(1e-6));
  CHECK(cosine_lr(50, 100, 1e-4, 1e-6) == doctest::Approx((1e-4 + 1e-6) / 2));
  for (int s = 1; s <= 100; ++s) CHECK(cosine_lr(s, 100, 1e-4, 1e-6) <= cosine_lr(s - 1, 100, 1e-4, 1e-6));
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  Var w(Tensor({1, 1, 2}, {1.0, -2.0}), true);
  Adam adam({w});
  ops::weighted_sum(w, Tensor({1, 1, 2}, {3.0, -0.5})).backward();
  adam.step(0.1);
  CHECK(w.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.value()[1] == doctest::Approx(-1.9).epsilon(1e-6));

  Var x(Tensor({1, 1, 1}, {5.0}), true);
  Adam opt({x});
  for (int i = 0; i < 2000; ++i) {
    x.zero_grad();
    ops::weighted_sum(ops::gelu(x), Tensor({1, 1, 1}, {1.0})).backward();
    opt.step(0.01);
  }
  CHECK(std::abs(x.value()[0] - (-0.7518)) < 0.05);
}

TEST_CASE("sample crop and flip") {
  SampleData s;
  std::mt19937_64 rng(4);
  s.blur.push_back(Tensor::uniform({3, 6, 8}, rng, 0.0, 1.0));
  s.sharp = Tensor::uniform({3, 6, 8}, rng, 0.0, 1.0);
  EventStream e;
  e.window = {0.0, 1.0, 0};
  e.height = 6;
  e.width = 8;
  e.events = {{0.1, 0, 0, 1}, {0.2, 7, 5, -1}, {0.3, 3, 2, 1}};
  s.events.push_back(e);

  const auto f = flip_sample(s);
  CHECK(f.events[0].events[0].x == 7);
  CHECK(f.events[0].events[1].x == 0);
  CHECK(f.events[0].events[1].p == -1);
  CHECK(f.blur[0].at(1, 2, 0) == s.blur[0].at(1, 2, 7));
  const auto ff = flip_sample(f);
  CHECK(ff.events[0] == s.events[0]);
  CHECK(ff.blur[0] == s.blur[0]);

  const auto c = crop_sample(s, 1, 2, 4, 4);
  CHECK(c.blur[0].shape() == Shape{3, 4, 4});
  REQUIRE(c.events[0].events.size() == 1);
  CHECK(c.events[0].events[0].x == 1);
  CHECK(c.events[0].events[0].y == 1);
  CHECK(c.sharp.at(0, 0, 0) == s.sharp.at(0, 1, 2));
  CHECK_NOTHROW(validate(c.events[0]));
}

TEST_CASE("dataset loading") {
  const auto data = load_dataset(tiny_dataset());
  REQUIRE(data.size() == 2);
  CHECK(data[0].blur.size() == 5);
  CHECK(data[0].events.size() == 5);
  CHECK(data[0].sharp.shape() == Shape{3, 16, 16});
  CHECK(data[0].events[1].window.t_start > data[0].events[0].window.t_end);
}

TEST_CASE("training rejects zero steps") {
  CmtaModel m(tiny_config());
  const auto data = load_dataset(tiny_dataset());
  CHECK_THROWS_AS(train(m, data, tiny_options(0)), ArgumentError);
}

TEST_CASE("training is reproducible under a fixed seed") {
  const auto data = load_dataset(tiny_dataset());
  CmtaModel a(tiny_config()), b(tiny_config());
  const auto sa = train(a, data, tiny_options(3));
  const auto sb = train(b, data, tiny_options(3));
  CHECK(sa.losses == sb.losses);
  CHECK(sa.step == 3);
  for (const auto& name : a.store().names()) CHECK(a.store().get(name).value() == b.store().get(name).value());
}

TEST_CASE("training writes checkpoints and a loss log") {
  const auto dir = cmta::testing::temp_dir("train_out");
  const auto data = load_dataset(tiny_dataset());
  CmtaModel m(tiny_config());
  std::ostringstream log;
  auto opt = tiny_options(4);
  opt.settings.checkpoint_every = 2;
  opt.checkpoint_path = dir / "m.ckpt";
  opt.log = &log;
  const auto state = train(m, data, opt);
  CHECK(fs::exists(dir / "m.ckpt"));
  CHECK(load_checkpoint(dir / "m.ckpt").step == 4);
  std::istringstream lines(log.str());
  int step = 0;
  double loss = 0.0, lr = 0.0;
  int count = 0;
  while (lines >> step >> loss >> lr) {
    ++count;
    CHECK(step == count);
    CHECK(std::isfinite(loss));
  }
  CHECK(count == 4);
  CHECK(state.lr == doctest::Approx(cosine_lr(3, 4, 1e-4, 1e-6)));
}

TEST_CASE("non-finite loss aborts training") {
  auto data = load_dataset(tiny_dataset());
  for (auto& s : data) s.sharp[0] = std::nan("");
  auto opt = tiny_options(1);
  opt.settings.crop = 16;
  CmtaModel m(tiny_config());
  CHECK_THROWS_AS(train(m, data, opt), NonFiniteError);
}

TEST_CASE("evaluation report and read-only contract") {
  const auto dir = cmta::testing::temp_dir("eval");
  const auto data = load_dataset(tiny_dataset());
  CmtaModel m(tiny_config());
  save_checkpoint(make_checkpoint(m, 0), dir / "m.ckpt");
  const auto ckpt_before = slurp(dir / "m.ckpt");
  const auto manifest_before = slurp(tiny_dataset() / "index.json");

  const auto model = model_from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  const auto r1 = evaluate(model, data);
  const auto r2 = evaluate(model, data);
  CHECK(r1.format() == r2.format());
  REQUIRE(r1.rows.size() == 2);
  double mean = 0.0;
  for (const auto& row : r1.rows) mean += row.psnr;
  CHECK(r1.mean_psnr == doctest::Approx(mean / 2));
  CHECK(r1.rows[0].blur_psnr == doctest::Approx(psnr(data[0].blur[2], data[0].sharp)));

  CHECK(slurp(dir / "m.ckpt") == ckpt_before);
  CHECK(slurp(tiny_dataset() / "index.json") == manifest_before);
}

TEST_CASE("missing dataset files are listed") {
  const auto dir = cmta::testing::temp_dir("broken");
  fs::copy(tiny_dataset(), dir / "data", fs::copy_options::recursive);
  fs::remove(dir / "data" / "seq" / "blur" / "000001.png");
  fs::remove(dir / "data" / "seq" / "events" / "000002.evt");
  try {
    load_dataset(dir / "data");
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("000001.png") != std::string::npos);
    CHECK(msg.find("000002.evt") != std::string::npos);
  }
}

TEST_CASE("inference pads odd sizes and returns the input size") {
  CmtaModel m(tiny_config());
  std::mt19937_64 rng(7);
  SampleData s;
  for (int k = 0; k < 5; ++k) {
    s.blur.push_back(Tensor::uniform({3, 10, 7}, rng, 0.0, 1.0));
    EventStream e;
    e.window = {k * 1.0, k + 1.0, k};
    e.height = 10;
    e.width = 7;
    e.events = {{k + 0.5, 6, 9, 1}};
    s.events.push_back(e);
  }
  const auto out = infer(m, s);
  CHECK(out.shape() == Shape{3, 10, 7});
  CHECK(out.abs_max() <= 1.0);
  CHECK(pad_replicate(s.blur[0], 4).shape() == Shape{3, 12, 8});
  CHECK(pad_replicate(s.blur[0], 4).at(2, 11, 7) == s.blur[0].at(2, 9, 6));
}

TEST_CASE("sample directories") {
  const auto dir = cmta::testing::temp_dir("sample_dir");
  const auto src = tiny_dataset() / "seq";
  fs::create_directories(dir / "blur");
  fs::create_directories(dir / "events");
  for (int k = 0; k < 3; ++k) {
    fs::copy_file(src / "blur" / frame_name(k, "png"), dir / "blur" / frame_name(k, "png"));
    fs::copy_file(src / "events" / frame_name(k, "evt"), dir / "events" / frame_name(k, "evt"));
  }
  const auto s = load_sample_dir(dir, 2);
  REQUIRE(s.blur.size() == 5);
  CHECK(s.blur[0] == s.blur[1]);
  CHECK(s.events[4] == s.events[3]);
  CmtaModel m(tiny_config());
  CHECK(infer(m, s).shape() == Shape{3, 16, 16});
  fs::remove(dir / "events" / frame_name(2, "evt"));
  CHECK_THROWS_AS(load_sample_dir(dir, 2), IoError);
}

TEST_CASE("gradient check utility") {
  const auto lin = gradient_check_block("linear", 4, 1e-5, 0);
  CHECK(lin.max_rel_error < 1e-7);
  CHECK(lin.checked == 3 * 4 * 9 + 4 + 3 * 16);
  CHECK_THROWS_AS(gradient_check_block("linear", 4, 0.0, 0), ArgumentError);
  CHECK_THROWS_AS(gradient_check_block("linear", 4, -1e-5, 0), ArgumentError);
  CHECK_THROWS_AS(gradient_check_block("nonsense", 4, 1e-5, 0), ArgumentError);
  CHECK_THROWS_AS(gradient_check_block("linear", 6, 1e-5, 0), DivisibilityError);
  for (const auto& b : gradcheck_blocks()) CHECK(gradient_check_block(b, 4, 1e-5, 1).max_rel_error < 1e-3);
}
