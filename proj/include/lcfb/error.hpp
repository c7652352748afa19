#pragma once

#include <stdexcept>
#include <string>

namespace lcfb {

// Base for every error the library raises. Subclasses let callers (the CLI,
// the HTTP layer) map failures to exit codes and status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  InsufficientDataError(const std::string& what, std::size_t have, std::size_t need)
      : Error(what), have_(have), need_(need) {}
  std::size_t have() const { return have_; }
  std::size_t need() const { return need_; }

 private:
  std::size_t have_;
  std::size_t need_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// The process environment is unusable, e.g. a port is already bound.
class EnvironmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace lcfb
