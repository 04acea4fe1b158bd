// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fedcache {

/// Base of every error the library throws. Each category maps to a process
/// exit code used by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration: bad shapes, out-of-range settings, unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Input data could not be read or does not have the expected format.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// API misuse, e.g. a tape consumed twice or a step index out of range.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Federated protocol violation (mismatched model structure, empty round).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedcache
