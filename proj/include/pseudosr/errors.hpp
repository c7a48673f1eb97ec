#pragma once

#include <stdexcept>
#include <string>

namespace pseudosr {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedScaleError : public Error {
 public:
  explicit UnsupportedScaleError(int scale)
      : Error("unsupported scale factor " + std::to_string(scale) + " (expected 2 or 4)") {}
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& what, std::string path) : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Raised when a loss becomes NaN or infinite during training.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& term, long iteration)
      : Error("non-finite value in loss term '" + term + "' at iteration " + std::to_string(iteration)),
        term_(term),
        iteration_(iteration) {}
  const std::string& term() const noexcept { return term_; }
  long iteration() const noexcept { return iteration_; }

 private:
  std::string term_;
  long iteration_;
};

inline void check_scale(int scale) {
  if (scale != 2 && scale != 4) throw UnsupportedScaleError(scale);
}

}  // namespace pseudosr
