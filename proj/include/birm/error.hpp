#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace birm {

// Base of every error raised by the library. `kind()` is a stable machine-readable tag
// (the CLI maps it to an exit code).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Input or configuration outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

// Precondition on object state violated (e.g. extending a terminal trajectory).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

class IndexError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "index"; }
};

// Malformed or schema-violating record in a data file.
class SchemaError : public ValidationError {
 public:
  SchemaError(std::string field, std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": field '" + field + "': " + what),
        field_(std::move(field)),
        line_(line) {}
  const char* kind() const noexcept override { return "schema"; }
  const std::string& field() const noexcept { return field_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

// Failure of a generator policy while producing step `step_index`.
class PolicyError : public Error {
 public:
  PolicyError(std::size_t step_index, const std::string& what)
      : Error("policy failed at step " + std::to_string(step_index) + ": " + what),
        step_index_(step_index) {}
  const char* kind() const noexcept override { return "policy"; }
  std::size_t step_index() const noexcept { return step_index_; }

 private:
  std::size_t step_index_;
};

}  // namespace birm
