// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Event streams, their voxel-grid embedding and the text event-file format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmta/tensor.hpp"

namespace cmta {

struct Event {
  double t = 0.0;      // seconds
  std::int32_t x = 0;  // column
  std::int32_t y = 0;  // row
  std::int8_t p = 1;   // +1 or -1

  bool operator==(const Event&) const = default;
};

struct ExposureWindow {
  double t_start = 0.0;
  double t_end = 0.0;
  int frame_index = 0;

  double duration() const { return t_end - t_start; }
  bool operator==(const ExposureWindow&) const = default;
};

/// Events of one exposure window on an H x W sensor, sorted by time.
struct EventStream {
  ExposureWindow window;
  int height = 0;
  int width = 0;
  std::vector<Event> events;

  bool operator==(const EventStream&) const = default;

  /// Signed polarity sum.
  std::int64_t net_polarity() const;
};

/// Throws if events are unsorted, outside the window or the sensor, or carry
/// a polarity other than +-1.
void validate(const EventStream& stream);

/// C x H x W temporal-bin embedding of an event stream.
struct VoxelGrid {
  Tensor data;

  int bins() const { return static_cast<int>(data.channels()); }
  int height() const { return static_cast<int>(data.height()); }
  int width() const { return static_cast<int>(data.width()); }
};

struct VoxelOptions {
  /// Divide by the largest absolute entry (skipped for all-zero grids).
  bool normalize = false;
};

/// Each event at normalised time t* = (t - t_start) / duration * (bins - 1)
/// adds (1 - |t* - b|) * p to bins b with |t* - b| < 1 at its pixel.
VoxelGrid build_voxel_grid(const EventStream& stream, int bins, int height, int width, VoxelOptions options = {});

/// Splits the bins into `n_parts` consecutive equal groups.
std::vector<Tensor> partition_voxel_grid(const VoxelGrid& grid, int n_parts);

/// [grid_m || grid_m_plus_1] along channels.
Tensor pair_exposure_grids(const VoxelGrid& grid_m, const VoxelGrid& grid_m_plus_1);

// Event file:
//   # events v1 H=<int> W=<int> t0=<float> t1=<float>
//   t x y p
//   ...
EventStream read_events(const std::filesystem::path& path);
void write_events(const EventStream& stream, const std::filesystem::path& path);

EventStream parse_events(std::string_view text);
std::string format_events(const EventStream& stream);

/// Shortest round-tripping fixed-point rendering with at least six decimals.
std::string format_seconds(double t);

}  // namespace cmta
