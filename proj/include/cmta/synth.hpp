// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic training data: blurred frames by averaging sharp frames, and
// events from a per-pixel contrast-threshold model on log luminance.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmta/events.hpp"
#include "cmta/tensor.hpp"

namespace cmta {

inline constexpr double kDisplayGamma = 2.2;
inline constexpr double kLogEps = 1e-4;

/// Pixel-wise mean of equally shaped images. With `use_gamma`, frames are
/// linearised (v^2.2) before averaging and re-encoded (v^(1/2.2)) afterwards.
Tensor synthesize_blur(std::span<const Tensor> frames, bool use_gamma);

/// H x W map of positive contrast thresholds.
struct ThresholdField {
  Tensor c;
};

/// I.i.d. N(mu, sigma^2) per pixel, clamped below at 0.01.
ThresholdField sample_threshold_field(int height, int width, double mu, double sigma, std::uint64_t seed);

struct SharpSequence {
  std::vector<Tensor> frames;  // 3 x H x W each; frame i sits at time i / fps
  double fps = 240.0;

  double time_of(std::size_t i) const { return static_cast<double>(i) / fps; }
  double duration() const { return frames.empty() ? 0.0 : time_of(frames.size() - 1); }
};

/// log(Rec.601 luminance of linearised RGB + 1e-4), as an H x W tensor.
Tensor log_luminance(const Tensor& image);

/// Contrast-threshold event generation. Log luminance is linear in time
/// between frames; a pixel fires whenever it moves a full threshold away
/// from its reference level, at the interpolated crossing time, and the
/// reference steps to the crossed level. Reference levels start at the
/// window's opening luminance.
EventStream simulate_events(const SharpSequence& seq, const ThresholdField& thresholds, const ExposureWindow& window);

/// Crossing events of one pixel whose log luminance moves linearly from
/// `l_start` at `t_start` to `l_end` at `t_end`. `level` is the pixel's
/// reference index relative to `base` and is updated in place.
void emit_crossings(double t_start, double t_end, double l_start, double l_end, double base, double threshold,
                    std::int64_t& level, std::int32_t x, std::int32_t y, std::vector<Event>& out);

/// Smooth random colour texture translating by (vx, vy) pixels per frame.
SharpSequence render_moving_texture(int height, int width, int frames, std::uint64_t seed, double vx = 1.5,
                                    double vy = 0.5, double fps = 240.0);

struct SynthOptions {
  int P = 2;
  int window = 7;
  int stride = 7;
  double fps = 240.0;
  std::uint64_t seed = 0;
  double threshold_mu = 0.2;
  double threshold_sigma = 0.03;
  bool gamma = false;
};

struct SequenceEntry {
  std::string name;
  int num_frames = 0;
  int height = 0;
  int width = 0;
  int num_windows = 0;
};

struct SampleEntry {
  std::string id;
  std::string sequence;
  std::vector<int> windows;  // 2P+1 consecutive blur-window indices
  int target_frame = 0;      // sharp frame index of the ground truth
  std::vector<ExposureWindow> times;
};

/// Contents of `<root>/index.json`.
struct DatasetIndex {
  int P = 2;
  int window = 7;
  int stride = 7;
  double fps = 240.0;
  std::uint64_t seed = 0;
  double threshold_mu = 0.2;
  double threshold_sigma = 0.03;
  std::vector<SequenceEntry> sequences;
  std::vector<SampleEntry> samples;
};

/// Number of complete blur windows in a sequence of `frames` sharp frames.
int count_windows(int frames, int window, int stride);
/// Number of (2P+1)-window samples; throws RangeError when there are none.
int count_samples(int frames, int P, int window, int stride);

/// Reads `<sharp_root>/<seq>/sharp/%06d.png` (or `<sharp_root>/sharp/` as a
/// single sequence), writes blur frames, event files and sharp copies under
/// `<out_root>/<seq>/` and the manifest `<out_root>/index.json`.
DatasetIndex build_dataset(const std::filesystem::path& sharp_root, const std::filesystem::path& out_root,
                           const SynthOptions& options);

/// Writes `seq` as `<dir>/sharp/%06d.png`.
void write_sharp_sequence(const SharpSequence& seq, const std::filesystem::path& dir);

std::string manifest_json(const DatasetIndex& index);
void write_manifest(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex read_manifest(const std::filesystem::path& path);

/// Window indices 2P+1 around `center`, clamped to [0, count) so edge targets
/// replicate the first or last frame.
std::vector<int> neighbourhood(int center, int P, int count);

std::string frame_name(int index, const char* ext);

}  // namespace cmta
