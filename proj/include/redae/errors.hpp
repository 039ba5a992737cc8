#pragma once

#include <stdexcept>
#include <string>

namespace redae {

/// Base of every exception thrown by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf values, undefined statistics, diverged training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (backward without a forward, etc).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class DataErrorKind {
  kIo,
  kMalformedHeader,
  kDimensionMismatch,
  kIllegalLabel,
  kManifest,
  kGeneration,
  kChecksum,
  kVersion,
};

const char* to_string(DataErrorKind kind);

/// Problems with files on disk or with the contents of a dataset.
class DataError : public Error {
 public:
  DataError(DataErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}

  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

}  // namespace redae
