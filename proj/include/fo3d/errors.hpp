#pragma once

#include <stdexcept>
#include <string>

namespace fo3d {

// Process exit codes used by the CLI. Library code throws; tools map the
// exception type to one of these.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

/// Missing or inconsistent configuration (weights, label sets, keys).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that violates a documented invariant.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed FOT1 / PLY / text files.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// A scene file is missing or its contents are inconsistent.
class LoadError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf during optimization, or an oracle mismatch in selftest.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fo3d
