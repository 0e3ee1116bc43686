// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>

#include "cmta/events.hpp"
#include "cmta/tensor.hpp"

namespace cmta::testing {

/// Random valid stream with up to `max_events` events on [t0, t1].
inline EventStream random_stream(std::mt19937_64& rng, int max_events, int height, int width, double t0 = 0.0,
                                 double t1 = 1.0) {
  EventStream s;
  s.window = {t0, t1, 0};
  s.height = height;
  s.width = width;
  std::uniform_int_distribution<int> count(0, max_events), xs(0, width - 1), ys(0, height - 1);
  std::uniform_real_distribution<double> ts(t0, t1);
  const int n = count(rng);
  for (int i = 0; i < n; ++i)
    s.events.push_back({ts(rng), xs(rng), ys(rng), static_cast<std::int8_t>((rng() & 1u) ? 1 : -1)});
  std::sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cmta_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Tensor constant_image(double v, std::int64_t h, std::int64_t w, std::int64_t c = 3) {
  return Tensor::constant({c, h, w}, v);
}

}  // namespace cmta::testing
