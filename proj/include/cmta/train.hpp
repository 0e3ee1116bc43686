// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmta/config.hpp"
#include "cmta/events.hpp"
#include "cmta/metrics.hpp"
#include "cmta/model.hpp"
#include "cmta/synth.hpp"

namespace cmta {

/// One training/evaluation example held in memory.
struct SampleData {
  std::string id;
  std::vector<Tensor> blur;          // 2P+1 frames, target in the middle
  std::vector<EventStream> events;   // matching exposure windows
  Tensor sharp;                      // ground truth for the middle frame
};

SampleData load_sample(const DatasetIndex& index, const std::filesystem::path& root, std::size_t i);
/// Reads `<root>/index.json` and every sample it lists.
std::vector<SampleData> load_dataset(const std::filesystem::path& root);
/// Reads `<dir>/blur/*.png` and `<dir>/events/*.evt` (sorted by name, equal
/// counts). The middle file is the target; missing neighbours are
/// replicated from the edges to reach 2P+1.
SampleData load_sample_dir(const std::filesystem::path& dir, int P);

/// Joint spatial crop of frames, events and target.
SampleData crop_sample(const SampleData& s, int y, int x, int height, int width);
/// Joint horizontal mirror; event x becomes W - 1 - x, polarity unchanged.
SampleData flip_sample(const SampleData& s);

/// Adaptive-moment gradient descent.
class Adam {
 public:
  explicit Adam(std::vector<Var> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Cosine decay from `lr` at step 0 towards `lr_min` at `total`.
double cosine_lr(std::int64_t step, std::int64_t total, double lr, double lr_min);

struct TrainOptions {
  int steps = 1;
  TrainSettings settings;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::ostream* log = nullptr;            // "step loss lr" lines
};

struct TrainState {
  std::int64_t step = 0;
  double lr = 0.0;
  double running_loss = 0.0;
  std::filesystem::path checkpoint_path;
  std::uint64_t seed = 0;
  std::vector<double> losses;  // per step
};

/// Loss, forward and backward for one sample; returns the L1 loss.
double train_step_loss(const CmtaModel& model, const SampleData& sample);

TrainState train(CmtaModel& model, std::span<const SampleData> samples, const TrainOptions& options);

/// Deblurs the middle frame, clamped to [0, 1]. Frames whose size is not a
/// multiple of 4 are edge-padded for the network and cropped back.
Tensor infer(const CmtaModel& model, const SampleData& sample);

MetricsReport evaluate(const CmtaModel& model, std::span<const SampleData> samples);

/// Zero-padding-free replicate padding up to multiples of `multiple`.
Tensor pad_replicate(const Tensor& image, int multiple);

}  // namespace cmta
