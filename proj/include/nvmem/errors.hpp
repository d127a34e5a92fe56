#pragma once

#include <stdexcept>
#include <string>

namespace nvmem {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-domain input (bad axis, negative width, empty list ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Input parsed fine but violates a numerical precondition of the solver,
// e.g. a time step too coarse for the fastest rate in the system.
class PreconditionViolation : public Error {
 public:
  using Error::Error;
};

// Scenario / ensemble file does not match the documented schema.
// `pointer` is a JSON pointer to the offending value.
class SchemaError : public InvalidInput {
 public:
  SchemaError(std::string pointer, const std::string& what)
      : InvalidInput(pointer + ": " + what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}
}  // namespace detail

}  // namespace nvmem
