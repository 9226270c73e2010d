#pragma once

#include <stdexcept>
#include <string>

namespace resunetpp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes, channel counts or spatial sizes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An object used in a state that does not allow the call: backward twice,
// eval-mode batch norm without running statistics, detached loss.
class StateError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or mismatched serialized data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace resunetpp
