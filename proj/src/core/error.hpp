#pragma once

#include <stdexcept>
#include <string>

namespace trust {

enum class ErrorKind {
  Dimension,
  Parameter,
  Contract,
  Io,
  Numeric,
  Singular,
  Refused,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Parameter, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

/// Raised when a computation produces a non-finite value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class SingularError : public Error {
 public:
  explicit SingularError(const std::string& what) : Error(ErrorKind::Singular, what) {}
};

/// The request is well formed but exceeds a configured limit (never silently degraded).
class RefusedError : public Error {
 public:
  explicit RefusedError(const std::string& what) : Error(ErrorKind::Refused, what) {}
};

}  // namespace trust
