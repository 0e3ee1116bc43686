// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cmta {

/// Architecture hyperparameters. Key names double as config-file keys.
struct CMTAConfig {
  int P = 2;                  // neighbours on each side of the target frame
  int voxel_bins = 16;        // C
  int crife_iterations = 4;   // N, must divide voxel_bins
  int base_channels = 16;     // level-0 width; doubles per pyramid level
  int scales = 3;
  int dynamic_kernel = 3;     // s_k
  int event_channels = 8;     // width of per-slice event features
  bool enable_crife = true;
  bool enable_ecitfa = true;
  bool normalize_attention = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// True when parameters of one config can be loaded into the other.
  bool architecture_equals(const CMTAConfig& other) const;

  bool operator==(const CMTAConfig&) const = default;
};

/// Optimisation settings read from the same key=value file.
struct TrainSettings {
  double lr = 1e-4;
  double lr_min = 1e-6;
  int crop = 48;
  bool flip = true;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only at the end

  bool operator==(const TrainSettings&) const = default;
};

struct ConfigFile {
  CMTAConfig model;
  TrainSettings train;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
ConfigFile parse_config(std::string_view text);
ConfigFile read_config(const std::filesystem::path& path);
std::string format_config(const CMTAConfig& config);
std::string format_config(const ConfigFile& config);

}  // namespace cmta
