#pragma once

#include <stdexcept>
#include <string>

namespace mmta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values reached a place that requires finite ones.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An object was used out of its lifecycle order (e.g. backward twice).
class StateError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

// A metric is not defined for the given input.
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmta
