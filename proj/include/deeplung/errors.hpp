#pragma once

#include <stdexcept>
#include <string>

namespace deeplung {

/// Shape or extent mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A network or block configuration whose channel/stride arithmetic does not close.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of an API, e.g. calling backward() on a non-scalar.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScheduleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. The message names the offending key or field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training or evaluation produced a non-finite value or cannot proceed numerically.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deeplung
