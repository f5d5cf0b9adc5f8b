#pragma once

#include <stdexcept>
#include <string>

namespace softtwin {

// Non-finite or out-of-domain input to a pure numeric routine.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Least-squares problem has too few distinct abscissae.
class InsufficientData : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Design matrix lost rank after column scaling.
class ConditioningError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; line is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

}  // namespace softtwin
