#pragma once

#include "kvt/grid.hpp"
#include "kvt/material.hpp"
#include "kvt/mech_step.hpp"

#include <vector>

namespace kvt {

/// Data of one thermal increment.
template <int Dim>
struct HeatIncrement {
  const StructuredGrid<Dim>* grid = nullptr;
  const MaterialModel* material = nullptr;
  NodalField y_prev;           // y^{k-1}
  NodalField y_new;            // y^k
  NodalField theta_prev;       // theta^{k-1}
  std::vector<double> w_prev;  // w^{k-1} at cell quadrature points
  double tau = 0.0;
  double eps = 0.0;
  std::vector<double> theta_b;  // step-averaged regularized boundary temperature at boundary face quadrature points
};

struct HeatOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double tol_pos = 1e-10;
  int max_iter = 50;
  int max_backtracks = 40;
};

template <int Dim>
struct HeatResult {
  NodalField theta_new;
  std::vector<double> w_new;  // enthalpy(grad y_new, max(theta, 0)) at quadrature points
  double min_theta = 0.0;     // over quadrature points and nodal values
  double clamp = 0.0;         // max(0, -min_theta); consumers evaluate max(theta, 0)
  bool positive = true;       // min_theta >= -tol_pos
  double functional_value = 0.0;
  double functional_prev = 0.0;
  int iterations = 0;
  double residual_norm = 0.0;
  double initial_residual = 0.0;
};

/// Evaluates the thermal functional, its gradient and Hessian. Precomputes the explicit data
/// (pulled-back conductivity, regularized heat source) from y_prev and theta_prev.
template <int Dim>
class HeatProblem {
 public:
  explicit HeatProblem(const HeatIncrement<Dim>& inc);

  [[nodiscard]] double value(const NodalField& theta) const;
  [[nodiscard]] NodalField gradient(const NodalField& theta) const;
  [[nodiscard]] Eigen::SparseMatrix<double> hessian(const NodalField& theta) const;

  /// Per quadrature point data.
  [[nodiscard]] const std::vector<Tensor2<Dim>>& F_new() const { return Fn_; }
  [[nodiscard]] const std::vector<Tensor2<Dim>>& rate() const { return dF_; }  // (grad y_new - grad y_prev) / tau
  [[nodiscard]] const std::vector<Tensor2<Dim>>& conductivity() const { return K_; }
  [[nodiscard]] const std::vector<double>& heat_source() const { return xi_reg_; }
  [[nodiscard]] const std::vector<double>& dissipation() const { return xi_; }
  [[nodiscard]] const HeatIncrement<Dim>& increment() const { return inc_; }

 private:
  HeatIncrement<Dim> inc_;
  std::vector<Tensor2<Dim>> Fn_, dF_, K_;
  std::vector<double> xi_, xi_reg_;
  Eigen::SparseMatrix<double> robin_;
};

template <int Dim>
double heat_functional(const HeatIncrement<Dim>& inc, const NodalField& theta);

/// Newton from theta_prev. Throws StepRejected on non-convergence.
template <int Dim>
HeatResult<Dim> solve_heat(const HeatIncrement<Dim>& inc, const HeatOptions& opt = {});

/// enthalpy(grad y, max(theta, 0)) at every cell quadrature point.
template <int Dim>
std::vector<double> enthalpy_field(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                   const NodalField& theta);

/// Smallest of the nodal values and the quadrature-point values of a scalar field.
template <int Dim>
double min_scalar(const StructuredGrid<Dim>& grid, const NodalField& theta);

}  // namespace kvt
