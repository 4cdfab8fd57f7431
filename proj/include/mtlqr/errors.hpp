#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace mtlqr {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (non-square input, mismatched blocks, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input violates a structural precondition (asymmetric, not positive
/// definite, out-of-range parameter).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An iterative kernel did not converge or produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Riccati iteration failed to converge: the pair (A, B) is treated as not
/// stabilizable.
class NonStabilizableError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A closed loop (or a Lyapunov operand) is not Schur stable.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, double rho, std::string task_id = {},
                   std::optional<std::size_t> iteration = std::nullopt)
      : Error(what), rho_(rho), task_id_(std::move(task_id)), iteration_(iteration) {}

  double rho() const { return rho_; }
  const std::string& task_id() const { return task_id_; }
  std::optional<std::size_t> iteration() const { return iteration_; }

 private:
  double rho_;
  std::string task_id_;
  std::optional<std::size_t> iteration_;
};

/// A certificate cannot be constructed for the requested contraction rate.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// A result failed a post-hoc validation (unconverged run, failed bound).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input document: bad JSON, unknown keys, wrong types.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtlqr
