#pragma once

#include <stdexcept>
#include <string>

namespace surq {

// Tensor or feature width does not match what the callee expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf in inputs, gradients or losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content: bad magic, missing column, truncated record.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates a data invariant (e.g. non-monotone frames).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation is not valid in the current object state (e.g. sampling an empty buffer).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace surq
