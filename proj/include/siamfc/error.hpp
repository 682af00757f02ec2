#pragma once

#include <stdexcept>
#include <string>

namespace siamfc {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Tensor or layer shapes do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

/// Malformed file contents. Subclasses distinguish the model-file failure modes.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "version"; }
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "truncated"; }
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "checksum"; }
};

/// Numerical failure during training or tracking (non-finite loss or scores).
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

}  // namespace siamfc
