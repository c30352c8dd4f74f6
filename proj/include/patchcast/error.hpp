// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace patchcast {

enum class DataErrc {
  file_not_found,
  ragged_row,
  zero_numeric_columns,
  zero_data_rows,
  non_monotone_timestamp,
  parse_error,
  invalid_argument,
  all_missing_variable,
  bad_checkpoint,
};

const char* to_string(DataErrc code);

/// Malformed or degenerate input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  DataError(DataErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  DataErrc code() const noexcept { return code_; }

 private:
  DataErrc code_;
};

/// Tensor shapes or dimensions that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other arithmetic breakdown (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace patchcast
