// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fitv2 {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  config_error = 2,
  data_error = 3,
  numeric_failure = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::numeric_failure; }
};

// Shape or extent mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config_error; }
};

// Missing or malformed data on disk, oversize samples.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data_error; }
};

// Non-finite values, step underflow, fully masked rows.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, gradient into a frozen tensor.
class ContractError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

}  // namespace fitv2
