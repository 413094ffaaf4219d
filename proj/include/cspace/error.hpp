#pragma once

#include <stdexcept>
#include <string>

namespace cspace {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (wrong dimension, bad option).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Target lies outside the arm's workspace.
class Unreachable : public Error {
 public:
  using Error::Error;
};

/// The constraint set is empty or no solver restart reached feasibility.
class Infeasible : public Error {
 public:
  using Error::Error;
};

/// A metric failed symmetry / positive-definiteness checks.
class InvalidMetric : public Error {
 public:
  using Error::Error;
};

/// Query generation could not produce enough distinct candidates.
class InsufficientDiversity : public Error {
 public:
  using Error::Error;
};

/// Malformed file or wire payload.
class ParseError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace cspace
