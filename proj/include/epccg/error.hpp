#pragma once

#include <stdexcept>
#include <string>

namespace epccg {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user configuration or precondition (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Problems with input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& message, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class RangeError : public DataError {
 public:
  using DataError::DataError;
};

class LengthError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss during training (exit code 3).
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace epccg
