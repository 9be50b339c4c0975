#pragma once

#include <stdexcept>
#include <string>

namespace psconv {

// Inconsistent shapes or arguments passed to an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or corrupt files and byte streams.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Semantically invalid data: out-of-range labels, empty splits, NaN.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace psconv
