#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace defector {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or an experiment that cannot be set up as requested.
/// The CLI maps this to exit status 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data (files, records, values outside a function's domain).
/// The CLI maps this to exit status 2.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public DataError {
 public:
  using DataError::DataError;
};

/// Input does not follow its format. Carries the 1-based line number, or 0
/// when the input is a single value.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Caller broke a precondition (time running backwards, length mismatch).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace defector
