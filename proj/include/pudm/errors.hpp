#pragma once

#include <stdexcept>
#include <string>

namespace pudm {

// Raised when a computation produces NaN/Inf (divergence, overflow).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed input files; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace pudm
