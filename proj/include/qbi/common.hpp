#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qbi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Parameter point outside the model's domain box.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid experimental controls (negative time, m < 1, ...).
class ControlError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Gradient or estimator requested at a zero of the likelihood.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition of an operation violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Every particle landed on a zero-likelihood point.
class DegenerateEnsembleError : public std::runtime_error {
 public:
  explicit DegenerateEnsembleError(const std::string& what, std::size_t iteration = 0)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

// Heuristic asked to invert a zero uncertainty.
class DegenerateUncertaintyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qbi
