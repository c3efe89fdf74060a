#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bilevel {

// Shape or rank mismatch between grids, signals and filters.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A requested constant does not exist for the chosen potential.
class UnboundedConstantError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Lower-level iteration produced a non-finite value.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

// CG met a direction with p'Hp <= 0.
class SpdViolationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Upper-level loss kept increasing under a constant step.
class StepTooLargeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed signal/params file. offset is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  // what() without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

}  // namespace bilevel
