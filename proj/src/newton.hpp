#pragma once

// Damped Newton minimizer shared by the mechanical and thermal steps.

#include "kvt/mech_step.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <string>

namespace kvt::detail {

struct NewtonFns {
  std::function<double(const Eigen::VectorXd&)> value;
  /// Gradient restricted to free coefficients.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<Eigen::SparseMatrix<double>(const Eigen::VectorXd&)> hessian;
  /// Extra acceptance test for a trial point (trial, current); may be empty.
  std::function<bool(const Eigen::VectorXd&, const Eigen::VectorXd&)> gate;
  /// Called with every accepted iterate; may be empty.
  std::function<void(const Eigen::VectorXd&)> on_accept;
  std::vector<int> free;
};

struct NewtonReport {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  double residual_norm = 0.0;
  double initial_residual = 0.0;
  bool roundoff_stop = false;  // stopped on the round-off plateau above the requested tolerance
};

/// Minimizes from x0; throws StepRejected(what) if the line search or the iteration budget fails.
NewtonReport newton_minimize(Eigen::VectorXd x0, const NewtonFns& fns, const NewtonOptions& opt,
                             const std::string& what);

}  // namespace kvt::detail
