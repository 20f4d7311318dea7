#pragma once

#include <stdexcept>
#include <string>

namespace lpad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, hyperparameters, or config fields.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, malformed, or inconsistent dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Array container / checkpoint read or write failures.
class PersistenceError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given labels (e.g. no positives).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Broken internal contract; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace lpad
