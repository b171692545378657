#pragma once

#include <stdexcept>
#include <string>

namespace vptsurv {

/// Precondition violated by a caller-supplied value.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A metric has no defined value for the given input (e.g. CI without a
/// single comparable pair).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A slide has no tiles left to encode.
class EmptySlide : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cached two-stage features were produced by a different encoder or tiles.
class StaleCache : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file on disk (manifest, checkpoint, config, image).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vptsurv
