// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "cmta/errors.hpp"

namespace cmta {

Tensor read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const std::int64_t h = img.height, w = img.width;
  Tensor out({3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[static_cast<std::size_t>((y * w + x) * 3 + c)] / 255.0;
  return out;
}

void write_png(const Tensor& image, const std::filesystem::path& path) {
  require_chw(image, "write_png");
  if (image.channels() != 3) throw ShapeError("write_png expects 3 channels, got " + shape_str(image.shape()));
  const std::int64_t h = image.height(), w = image.width();
  std::vector<png_byte> buf(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        buf[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

Tensor flip_horizontal(const Tensor& image) {
  require_chw(image, "flip_horizontal");
  Tensor out(image.shape());
  const auto w = image.width();
  for (std::int64_t c = 0; c < image.channels(); ++c)
    for (std::int64_t y = 0; y < image.height(); ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
  return out;
}

Tensor crop(const Tensor& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
  require_chw(image, "crop");
  if (y < 0 || x < 0 || h < 1 || w < 1 || y + h > image.height() || x + w > image.width())
    throw BoundsError("crop window outside image " + shape_str(image.shape()));
  Tensor out({image.channels(), h, w});
  for (std::int64_t c = 0; c < image.channels(); ++c)
    for (std::int64_t r = 0; r < h; ++r)
      std::copy_n(image.data() + (c * image.height() + y + r) * image.width() + x, w, out.data() + (c * h + r) * w);
  return out;
}

Tensor clamp01(Tensor image) {
  for (auto& v : image.values()) v = std::clamp(v, 0.0, 1.0);
  return image;
}

}  // namespace cmta
