#pragma once

#include <stdexcept>
#include <string>

namespace ectnet {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape, channel or group arithmetic violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf values, divergent losses and other numerical failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, architecture description or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ectnet
