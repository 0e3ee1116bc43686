// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "cmta/tensor.hpp"

namespace cmta {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE); identical inputs give kPsnrCap.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean local SSIM on luminance (Rec.601 weights for RGB inputs) with an
/// 11 x 11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03. Near borders
/// the window is truncated and renormalised.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean absolute error.
double mean_abs_error(const Tensor& a, const Tensor& b);

struct MetricsRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double blur_psnr = 0.0;  // blurred input against ground truth
  double blur_ssim = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_blur_psnr = 0.0;
  double mean_blur_ssim = 0.0;

  void add(MetricsRow row);
  /// Recomputes the means from the rows.
  void finalize();
  /// `# ...` header lines, one `id psnr ssim` row per sample, final `mean` row.
  std::string format() const;
};

}  // namespace cmta
