#pragma once

#include "kvt/grid.hpp"
#include "kvt/material.hpp"

#include <limits>

namespace kvt {

/// Newton/line-search controls shared by the mechanical and thermal solvers.
struct NewtonOptions {
  double rel_tol = 1e-8;   // on the Euclidean norm of the free gradient, relative to the first iterate
  double abs_tol = 1e-12;  // absolute floor of the same norm
  int max_iter = 50;
  int max_backtracks = 40;
  double armijo = 1e-4;
  double det_floor = 0.1;  // trial accepted only if min det > det_floor * current min det
};

/// Data of one mechanical increment.
template <int Dim>
struct MechIncrement {
  const StructuredGrid<Dim>* grid = nullptr;
  const MaterialModel* material = nullptr;
  NodalField y_prev;      // y^{k-1}
  NodalField theta_prev;  // theta^{k-1} (scalar field); ignored when coupled == false
  double tau = 0.0;
  double eps = 0.0;
  NodalField load;        // coefficients L of the step-averaged load, <l, y> = L . y
  bool coupled = true;    // false: isothermal mode, the coupling energy is dropped
};

/// Breakdown of the incremental functional at one deformation.
struct MechFunctionalParts {
  double rate = 0.0;      // (1/tau) R(y_prev, y - y_prev)
  double eps_term = 0.0;  // (eps / 2 tau) |grad y - grad y_prev|^2
  double elastic = 0.0;   // integral of phi
  double hyper = 0.0;     // integral of H
  double coupling = 0.0;  // integral of the coupling energy at theta_prev
  double load = 0.0;      // <l, y>
  [[nodiscard]] double total() const { return rate + eps_term + elastic + hyper + coupling - load; }
};

struct MechResult {
  NodalField y_new;
  double functional_value = 0.0;
  double functional_prev = 0.0;
  double descent_gap = 0.0;  // functional at y_prev minus functional at y_new
  int iterations = 0;
  double min_detF = 0.0;
  double residual_norm = 0.0;
  double initial_residual = 0.0;
  double min_accepted_det = 0.0;  // smallest min det over all accepted line-search iterates
};

/// Evaluates the incremental functional, its gradient and Hessian. Precomputes data of y_prev.
template <int Dim>
class MechProblem {
 public:
  explicit MechProblem(const MechIncrement<Dim>& inc);

  /// +infinity when some quadrature point has det grad y <= 0.
  [[nodiscard]] double value(const NodalField& y) const;
  [[nodiscard]] MechFunctionalParts parts(const NodalField& y) const;
  /// Gradient with respect to all coefficients, Dirichlet rows zeroed. Requires det > 0.
  [[nodiscard]] NodalField gradient(const NodalField& y) const;
  /// Hessian restricted to free coefficients (free index numbering of free_dofs()).
  [[nodiscard]] Eigen::SparseMatrix<double> hessian(const NodalField& y) const;
  [[nodiscard]] const std::vector<int>& free_dofs() const { return free_; }
  [[nodiscard]] const MechIncrement<Dim>& increment() const { return inc_; }

 private:
  MechIncrement<Dim> inc_;
  std::vector<Tensor2<Dim>> Fp_;
  std::vector<Tensor4<Dim>> LtL_;
  std::vector<double> thp_;
  std::vector<int> free_;
  std::vector<int> free_index_;
};

template <int Dim>
double incremental_functional(const MechIncrement<Dim>& inc, const NodalField& y);

/// Damped Newton with determinant-gated Armijo backtracking. Throws StepRejected on failure.
template <int Dim>
MechResult solve_mech(const MechIncrement<Dim>& inc, const NewtonOptions& opt = {});

/// Main mechanical energy M(y) = integral of phi(grad y) + H(grad^2 y); +infinity if infeasible.
template <int Dim>
double mechanical_energy(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y);

/// Hyperstress part of M.
template <int Dim>
double hyperstress_energy_total(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y);

/// DM(y)[h].
template <int Dim>
double mechanical_energy_derivative(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                    const NodalField& h);

/// Smallest Lambda >= 0 with M(y2) >= M(y1) + DM(y1)[y2 - y1] - Lambda |grad(y2 - y1)|^2_{L^2}.
template <int Dim>
double estimate_lambda(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y1,
                       const NodalField& y2);

/// |grad v|^2_{L^2} for a vector field.
template <int Dim>
double grad_norm2(const StructuredGrid<Dim>& grid, const NodalField& v);

}  // namespace kvt
