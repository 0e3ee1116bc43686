// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "cmta/autograd.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "doctest.h"

using namespace cmta;

namespace {

Var randn(std::mt19937_64& rng, const Shape& shape, bool grad = true) {
  return Var(Tensor::normal(shape, rng), grad);
}

// Brute-force zero-padded cross-correlation.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const auto cin = x.channels(), h = x.height(), wd = x.width();
  const auto cout = w.dim(0), k = w.dim(2);
  const auto ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out({cout, ho, wo});
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        double s = b.empty() ? 0.0 : b[o];
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t i = 0; i < k; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
              const auto iy = y * stride + i - pad, ix = xx * stride + j - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              s += w[((o * cin + c) * k + i) * k + j] * x.at(c, iy, ix);
            }
        out.at(o, y, xx) = s;
      }
  return out;
}

// Brute-force per-pixel dynamic filter.
Tensor dynamic_oracle(const Tensor& d, const Tensor& t, int k) {
  const int r = k / 2;
  Tensor out(t.shape());
  for (std::int64_t c = 0; c < t.channels(); ++c)
    for (std::int64_t y = 0; y < t.height(); ++y)
      for (std::int64_t x = 0; x < t.width(); ++x) {
        double s = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const auto yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= t.height() || xx >= t.width()) continue;
            s += d.at(dynamic_tap(dy, dx, k), y, x) * t.at(c, yy, xx);
          }
        out.at(c, y, x) = s;
      }
  return out;
}

double check(const std::function<Var()>& f, std::vector<Var> vars) {
  return gradient_check(f, vars, 1e-5).max_rel_error;
}

}  // namespace

TEST_CASE("conv2d matches the brute-force oracle") {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2})
    for (int k : {1, 3, 5}) {
      const auto x = randn(rng, {3, 7, 6}, false), w = randn(rng, {4, 3, k, k}, false), b = randn(rng, {4}, false);
      const auto y = ops::conv2d(x, w, b, stride, k / 2);
      CHECK(max_abs_diff(y.value(), conv_oracle(x.value(), w.value(), b.value(), stride, k / 2)) < 1e-12);
    }
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  std::mt19937_64 rng(2);
  const auto w = randn(rng, {3, 2, 4, 4}, false);
  const auto x = randn(rng, {3, 5, 5}, false);
  const auto y = randn(rng, {2, 10, 10}, false);
  const auto up = ops::conv_transpose2d(x, w, Var(), 2, 1);
  CHECK(up.shape() == Shape{2, 10, 10});
  // <T x, y> == <x, C y> with C the stride-2 convolution sharing the weights.
  Tensor wt({3, 2, 4, 4});
  for (std::int64_t i = 0; i < wt.numel(); ++i) wt[i] = w.value()[i];
  const auto down = conv_oracle(y.value(), wt, Tensor(), 2, 1);
  double lhs = 0.0, rhs = 0.0;
  for (std::int64_t i = 0; i < up.value().numel(); ++i) lhs += up.value()[i] * y.value()[i];
  for (std::int64_t i = 0; i < down.numel(); ++i) rhs += down[i] * x.value()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("op gradients match finite differences") {
  std::mt19937_64 rng(3);
  const auto x = randn(rng, {2, 4, 4});
  const auto y = randn(rng, {2, 4, 4});
  const Tensor proj = Tensor::normal({2, 4, 4}, rng);
  auto sum = [&](const Var& v) { return ops::weighted_sum(v, proj); };

  CHECK(check([&] { return sum(ops::add(x, y)); }, {x, y}) < 1e-5);
  CHECK(check([&] { return sum(ops::sub(x, y)); }, {x, y}) < 1e-5);
  CHECK(check([&] { return sum(ops::scale(x, -1.5)); }, {x}) < 1e-5);
  CHECK(check([&] { return sum(ops::gelu(x)); }, {x}) < 1e-5);
  CHECK(check([&] { return sum(ops::relu(x)); }, {x}) < 1e-5);
  CHECK(check([&] { return ops::l1_loss(x, y); }, {x, y}) < 1e-5);

  const Var parts[] = {x, y};
  const Tensor proj4 = Tensor::normal({4, 4, 4}, rng);
  CHECK(check([&] { return ops::weighted_sum(ops::concat_channels(parts), proj4); }, {x, y}) < 1e-5);
  CHECK(check([&] { return ops::weighted_sum(ops::slice_channels(x, 1, 2), Tensor::constant({1, 4, 4}, 0.3)); }, {x}) <
        1e-5);

  const auto w = randn(rng, {3, 2, 3, 3}), b = randn(rng, {3});
  const Tensor p3 = Tensor::normal({3, 2, 2}, rng);
  CHECK(check([&] { return ops::weighted_sum(ops::conv2d(x, w, b, 2, 1), p3); }, {x, w, b}) < 1e-5);

  const auto wt = randn(rng, {2, 3, 4, 4}), bt = randn(rng, {3});
  const Tensor p8 = Tensor::normal({3, 8, 8}, rng);
  CHECK(check([&] { return ops::weighted_sum(ops::conv_transpose2d(x, wt, bt, 2, 1), p8); }, {x, wt, bt}) < 1e-5);

  const auto wd = randn(rng, {2, 1, 3, 3}), bd = randn(rng, {2});
  CHECK(check([&] { return sum(ops::depthwise_conv2d(x, wd, bd, 1)); }, {x, wd, bd}) < 1e-5);

  const Tensor p2 = Tensor::normal({2, 2, 2}, rng);
  CHECK(check([&] { return ops::weighted_sum(ops::avg_pool2(x), p2); }, {x}) < 1e-5);

  const auto f = randn(rng, {9, 4, 4});
  CHECK(check([&] { return sum(ops::dynamic_filter(f, x, 3)); }, {f, x}) < 1e-5);

  const Var q(Tensor::normal({2, 4, 4}, rng, 0.5), true), k(Tensor::normal({2, 4, 4}, rng, 0.5), true);
  const auto v = randn(rng, {2, 4, 4});
  const Var alpha(Tensor::constant({1}, 0.7), true);
  for (bool norm : {false, true})
    CHECK(check([&] { return sum(ops::transposed_attention(q, k, v, alpha, norm)); }, {q, k, v, alpha}) < 1e-5);
}

TEST_CASE("gradients accumulate over shared uses") {
  const Var x(Tensor::constant({1, 1, 1}, 2.0), true);
  const auto y = ops::add(x, ops::scale(x, 3.0));
  ops::weighted_sum(y, Tensor::constant({1, 1, 1}, 1.0)).backward();
  CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("no-grad mode records nothing") {
  const Var x(Tensor::constant({1, 2, 2}, 1.0), true);
  {
    NoGradGuard guard;
    CHECK(!grad_enabled());
    const auto y = ops::scale(x, 2.0);
    CHECK(!y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("single-channel attention returns V") {
  std::mt19937_64 rng(4);
  const auto q = randn(rng, {1, 3, 3}), k = randn(rng, {1, 3, 3}), v = randn(rng, {1, 3, 3});
  const Var alpha(Tensor::constant({1}, 0.37));
  for (bool norm : {false, true}) CHECK(ops::transposed_attention(q, k, v, alpha, norm).value() == v.value());
}

TEST_CASE("two-channel attention with orthonormal rows") {
  // Q = K = [[1, 0], [0, 1]] over L = 2 positions.
  const Var q(Tensor({2, 1, 2}, {1.0, 0.0, 0.0, 1.0}));
  const Var v(Tensor({2, 1, 2}, {2.0, -1.0, 0.5, 3.0}));
  const Var alpha(Tensor::constant({1}, 1.0));
  const double e = std::exp(1.0);
  const double a = e / (e + 1.0), b = 1.0 / (e + 1.0);
  const Tensor expected({2, 1, 2}, {a * 2.0 + b * 0.5, a * -1.0 + b * 3.0, b * 2.0 + a * 0.5, b * -1.0 + a * 3.0});
  std::vector<Tensor> seen;
  AttentionObserverScope scope([&](const Tensor& m) { seen.push_back(m); });
  for (bool norm : {false, true}) {
    const auto out = ops::transposed_attention(q, q, v, alpha, norm);
    CHECK(max_abs_diff(out.value(), expected) < 1e-15);
  }
  REQUIRE(seen.size() == 2);
  CHECK(seen[0][0] == doctest::Approx(a).epsilon(1e-15));
  CHECK(seen[0][1] == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("attention rows sum to one") {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  AttentionObserverScope scope([&](const Tensor& m) {
    const auto c = m.dim(0);
    for (std::int64_t i = 0; i < c; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < c; ++j) s += m[i * c + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  });
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = randn(rng, {6, 4, 4}, false), k = randn(rng, {6, 4, 4}, false), v = randn(rng, {6, 4, 4}, false);
    const Var alpha(Tensor::constant({1}, 0.05 + (rng() % 100) / 50.0));
    ops::transposed_attention(q, ops::scale(k, 10.0), v, alpha, trial % 2 == 0);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("attention rejects non-positive temperature") {
  const Var x(Tensor({2, 2, 2}));
  CHECK_THROWS_AS(ops::transposed_attention(x, x, x, Var(Tensor::constant({1}, 0.0)), true), ArgumentError);
  CHECK_THROWS_AS(ops::transposed_attention(x, x, x, Var(Tensor::constant({1}, -1.0)), true), ArgumentError);
  CHECK_THROWS_AS(ops::transposed_attention(x, Var(Tensor({3, 2, 2})), x, Var(Tensor::constant({1}, 1.0)), true),
                  ShapeError);
}

TEST_CASE("dynamic filter matches the brute-force loop") {
  std::mt19937_64 rng(6);
  for (int k : {1, 3, 5}) {
    const Tensor d = Tensor::normal({k * k, 9, 7}, rng), t = Tensor::normal({8, 9, 7}, rng);
    const auto out = ops::dynamic_filter(Var(d), Var(t), k);
    CHECK(max_abs_diff(out.value(), dynamic_oracle(d, t, k)) < 1e-12);
  }
}

TEST_CASE("dynamic filter special kernels") {
  std::mt19937_64 rng(7);
  const Tensor t = Tensor::normal({8, 8, 8}, rng);
  Tensor delta({9, 8, 8});
  for (std::int64_t i = 0; i < 64; ++i) delta[dynamic_tap(0, 0, 3) * 64 + i] = 1.0;
  CHECK(ops::dynamic_filter(Var(delta), Var(t), 3).value() == t);

  Tensor two = Tensor::constant({1, 8, 8}, 2.0);
  Tensor doubled = t;
  doubled *= 2.0;
  CHECK(ops::dynamic_filter(Var(two), Var(t), 1).value() == doubled);

  const Tensor mean = Tensor::constant({9, 8, 8}, 1.0 / 9.0);
  const auto out = ops::dynamic_filter(Var(mean), Var(t), 3).value();
  for (std::int64_t c = 0; c < 8; ++c)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        double s = 0.0;
        for (std::int64_t yy = y - 1; yy <= y + 1; ++yy)
          for (std::int64_t xx = x - 1; xx <= x + 1; ++xx)
            if (yy >= 0 && xx >= 0 && yy < 8 && xx < 8) s += t.at(c, yy, xx);
        CHECK(std::abs(out.at(c, y, x) - s / 9.0) < 1e-6);
      }

  CHECK_THROWS_AS(ops::dynamic_filter(Var(Tensor({9, 4, 4})), Var(t), 3), ShapeError);
  CHECK_THROWS_AS(ops::dynamic_filter(Var(Tensor({4, 8, 8})), Var(t), 3), ShapeError);
}

TEST_CASE("l1 loss values") {
  const Var a(Tensor::constant({3, 2, 2}, 1.0)), b(Tensor::constant({3, 2, 2}, 0.0));
  CHECK(ops::l1_loss(a, b).value()[0] == 1.0);
  CHECK(ops::l1_loss(a, a).value()[0] == 0.0);
  std::mt19937_64 rng(8);
  const Var x(Tensor::normal({3, 4, 4}, rng)), y(Tensor::normal({3, 4, 4}, rng));
  CHECK(ops::l1_loss(x, y).value()[0] == ops::l1_loss(y, x).value()[0]);
  CHECK(ops::l1_loss(x, y).value()[0] > 0.0);
  CHECK_THROWS_AS(ops::l1_loss(x, Var(Tensor({3, 4, 5}))), ShapeError);
}

TEST_CASE("shape errors") {
  const Var x(Tensor({2, 4, 4})), y(Tensor({2, 4, 5}));
  CHECK_THROWS_AS(ops::add(x, y), ShapeError);
  CHECK_THROWS_AS(ops::avg_pool2(y), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Var(Tensor({3, 3, 3, 3})), Var(), 1, 1), ShapeError);
  const Var parts[] = {x, y};
  CHECK_THROWS_AS(ops::concat_channels(parts), ShapeError);
}
