#pragma once

#include <stdexcept>
#include <string>

namespace diffaug {

// Domain and range violations use std::domain_error / std::out_of_range
// directly; the types below cover the remaining failure classes.

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidBoxError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class OrderingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CategoryConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an on-disk document fails validation. `field()` holds a JSON
/// pointer (or "line:col" for syntax errors) locating the problem.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace diffaug
