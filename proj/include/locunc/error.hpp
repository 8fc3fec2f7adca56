#pragma once

#include <stdexcept>
#include <string>

namespace locunc {

// Base of every error thrown by the library. The CLI maps these to a
// single-line diagnostic and a non-zero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation
// (zero variance in a log, Exp inverse of a non-positive value, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// File header disagrees with what the caller expects.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace locunc
