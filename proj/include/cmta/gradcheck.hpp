// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmta/autograd.hpp"

namespace cmta {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;  // scalar entries compared
  std::string worst;         // "<var index>[<element>]" of the largest error
};

/// Compares reverse-mode gradients of `loss` (a scalar) with respect to each
/// of `vars` against central differences with step `eps`.
/// Relative error is |ga - gn| / max(|ga|, |gn|, 1e-8).
GradCheckResult gradient_check(const std::function<Var()>& loss, std::span<const Var> vars, double eps);

/// Block ids: crife_forward, ctfa, cascade_align, decode, linear.
std::vector<std::string> gradcheck_blocks();

/// Builds a small double-precision instance of `block` at `size` x `size`
/// and checks all of its parameters and inputs.
GradCheckResult gradient_check_block(const std::string& block, int size = 4, double eps = 1e-5,
                                     std::uint64_t seed = 0);

}  // namespace cmta
