#pragma once

#include <stdexcept>
#include <string>

namespace mtpl {

/// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid argument value (bad connectivity, bad readout kind, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Violated API contract, e.g. a custom backward rule with the wrong arity.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Value outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// NaN or Inf encountered.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Request exceeds a configured resource cap.
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operation not available for this input kind.
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Iterative solve stopped before reaching its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations, double residual)
      : std::runtime_error(what), iterations_(iterations), residual_(residual) {}

  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  int iterations_;
  double residual_;
};

}  // namespace mtpl
