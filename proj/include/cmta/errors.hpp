// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmta {

/// Tensor or feature shapes disagree with what an operation requires.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument is outside its admissible domain.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An operation was invoked in a state where it is not defined.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct DivisibilityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidWindowError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BoundsError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// A requested time or frame range is not covered by the available data.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct OrderingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed text input. `line()` is 1-based; 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Training produced a NaN or infinite loss.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cmta
