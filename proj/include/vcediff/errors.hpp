#pragma once

#include <stdexcept>
#include <string>

namespace vcediff {

/// Tensor extents disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside the mathematical domain of an operation (e.g. log of 0).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// NaN or Inf was produced or supplied.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameters, run configuration or dataset specification.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: wrong call order, missing gradients, unsorted input.
class UsageError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent file content.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace vcediff
