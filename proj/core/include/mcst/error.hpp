#pragma once

#include <stdexcept>
#include <string>

namespace mcst {

// Base class for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or axes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Lookup index outside a table's row range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, missing gradients, detached graphs.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset/checkpoint bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Structurally valid file whose values violate channel invariants.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf escaped an op, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcst
