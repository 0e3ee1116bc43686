// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "cmta/tensor.hpp"

namespace cmta {

// Images are 3 x H x W tensors with values in [0, 1].

/// Reads an 8-bit PNG (any colour type) as RGB.
Tensor read_png(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const Tensor& image, const std::filesystem::path& path);

/// Mirrors columns.
Tensor flip_horizontal(const Tensor& image);
/// Rows [y, y + h), columns [x, x + w).
Tensor crop(const Tensor& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w);
Tensor clamp01(Tensor image);

}  // namespace cmta
