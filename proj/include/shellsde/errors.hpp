#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shellsde {

/// Malformed input: array shapes or indices that do not fit together.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A well-formed model or parameter set that violates a modelling requirement.
class ModelError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Numerical breakdown (non-finite values, solver failure).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A single simulated path became non-finite or overflowed.
class PathFailure : public NumericalError {
 public:
  PathFailure(const std::string& what, double time)
      : NumericalError(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Config/model file parse failure with a 1-based source position.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error(what), line_(line), column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace shellsde
