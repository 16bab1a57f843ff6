#pragma once

#include <stdexcept>
#include <string>

namespace upil {

// Base of every library error. The CLI maps each family to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration values or incompatible settings (exit 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint written by an incompatible format version or model shape.
class VersionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed or inconsistent input data (exit 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class SizeError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

// Internal contract or invariant violation (exit 4).
class InvariantError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public InvariantError {
 public:
  using InvariantError::InvariantError;
};

}  // namespace upil
