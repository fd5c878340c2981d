#pragma once

#include <stdexcept>
#include <string>

namespace msvm {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's mathematical domain (e.g. non-positive timescale).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid architecture / scan / run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation invoked in the wrong state (e.g. vjp without a forward record).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msvm
