#pragma once

#include <stdexcept>
#include <string>

#include "restok/real.hpp"

RESTOK_BEGIN_NAMESPACE

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or ranks do not match what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Grid extents are not divisible, empty, or otherwise inconsistent.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// An attention mask row allows no key position.
class MaskError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage is missing an artifact produced by an earlier stage.
class StageError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

RESTOK_END_NAMESPACE
