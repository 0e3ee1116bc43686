// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "cmta/errors.hpp"

namespace cmta {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.empty()) throw ShapeError(std::string(what) + ": empty input");
}

Tensor to_gray(const Tensor& img) {
  if (img.ndim() == 2) return img;
  require_chw(img, "ssim");
  if (img.channels() == 1) return img.reshaped({img.height(), img.width()});
  if (img.channels() != 3) throw ShapeError("ssim expects 1 or 3 channels, got " + shape_str(img.shape()));
  Tensor g({img.height(), img.width()});
  for (std::int64_t y = 0; y < img.height(); ++y)
    for (std::int64_t x = 0; x < img.width(); ++x)
      g[y * img.width() + x] = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
  return g;
}

// Separable Gaussian filtering of an H x W map with truncated,
// renormalised windows at the borders.
class GaussianWindow {
 public:
  GaussianWindow(int radius, double sigma) : radius_(radius), taps_(static_cast<std::size_t>(2 * radius + 1)) {
    for (int i = -radius; i <= radius; ++i)
      taps_[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  }

  Tensor filter(const Tensor& m) const {
    const auto h = m.dim(0), w = m.dim(1);
    Tensor tmp({h, w}), out({h, w});
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double s = 0.0, n = 0.0;
        for (int k = -radius_; k <= radius_; ++k) {
          const auto xx = x + k;
          if (xx < 0 || xx >= w) continue;
          const double t = taps_[static_cast<std::size_t>(k + radius_)];
          s += t * m[y * w + xx];
          n += t;
        }
        tmp[y * w + x] = s / n;
      }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double s = 0.0, n = 0.0;
        for (int k = -radius_; k <= radius_; ++k) {
          const auto yy = y + k;
          if (yy < 0 || yy >= h) continue;
          const double t = taps_[static_cast<std::size_t>(k + radius_)];
          s += t * tmp[yy * w + x];
          n += t;
        }
        out[y * w + x] = s / n;
      }
    return out;
  }

 private:
  int radius_;
  std::vector<double> taps_;
};

Tensor product(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same(a, b, "psnr");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
  require_same(a, b, "ssim");
  const Tensor ga = to_gray(a), gb = to_gray(b);
  const GaussianWindow window(5, 1.5);
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const Tensor mu_a = window.filter(ga), mu_b = window.filter(gb);
  const Tensor e_aa = window.filter(product(ga, ga)), e_bb = window.filter(product(gb, gb)),
               e_ab = window.filter(product(ga, gb));
  double total = 0.0;
  for (std::int64_t i = 0; i < ga.numel(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ga.numel());
}

double mean_abs_error(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mean_abs_error");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

void MetricsReport::add(MetricsRow row) {
  rows.push_back(std::move(row));
  finalize();
}

void MetricsReport::finalize() {
  mean_psnr = mean_ssim = mean_blur_psnr = mean_blur_ssim = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    mean_psnr += r.psnr;
    mean_ssim += r.ssim;
    mean_blur_psnr += r.blur_psnr;
    mean_blur_ssim += r.blur_ssim;
  }
  const double n = static_cast<double>(rows.size());
  mean_psnr /= n;
  mean_ssim /= n;
  mean_blur_psnr /= n;
  mean_blur_ssim /= n;
}

std::string MetricsReport::format() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "# samples %zu\n# blur-input baseline: psnr %.4f ssim %.6f\n", rows.size(),
                mean_blur_psnr, mean_blur_ssim);
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s %.4f %.6f\n", r.id.c_str(), r.psnr, r.ssim);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean %.4f %.6f\n", mean_psnr, mean_ssim);
  out += buf;
  return out;
}

}  // namespace cmta
