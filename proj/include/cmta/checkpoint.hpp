// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive layout (little-endian):
//   "CMTACKPT" u32 version
//   u64 config length, config text (key=value lines)
//   i64 training step
//   u64 tensor count, then per tensor:
//     u64 name length, name, u32 ndim, i64 dims[ndim], f64 data[numel]

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "cmta/config.hpp"
#include "cmta/model.hpp"
#include "cmta/tensor.hpp"

namespace cmta {

struct Checkpoint {
  CMTAConfig config;
  std::int64_t step = 0;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const CmtaModel& model, std::int64_t step);
/// Builds a model from the stored config and loads its parameters.
CmtaModel model_from_checkpoint(const Checkpoint& ckpt);
/// Loads into an existing model; throws ArgumentError if the architectures differ.
void restore(CmtaModel& model, const Checkpoint& ckpt);

}  // namespace cmta
