#pragma once

#include <stdexcept>
#include <string>

namespace asag {

// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A softmax row or attention key set with no unmasked entry.
class MaskError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad configuration keys, values or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input files (datasets, embeddings, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace asag
