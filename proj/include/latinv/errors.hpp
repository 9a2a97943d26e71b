#pragma once

#include <stdexcept>
#include <string>

namespace latinv {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or code shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied value is outside the accepted domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A model, plugin, or service configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate norms.
class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Checkpoint could not be read or written. `entry()` names the offending item.
class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::string entry)
      : Error(what), entry_(std::move(entry)) {}
  const std::string& entry() const noexcept { return entry_; }

 private:
  std::string entry_;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace latinv
