#pragma once

#include "kvt/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace kvt {

/// Parameters of the default constitutive family. All quantities are nondimensional.
struct MaterialParams {
  double c1 = 1.0;       // coefficient of |F|^s
  double c2 = 2.0;       // coefficient of the determinant barrier det(F)^-q
  double s = 4.0;
  double q = 4.0;
  double p = 4.0;        // hyperstress exponent
  double h_coef = 1e-2;  // hyperstress coefficient
  double nu = 1.0;       // viscosity
  double c = 1.0;        // heat capacity constant
  double alpha = 1.0;    // a(theta) = (1 + theta)^-alpha
  double conductivity = 1.0;  // K(theta) = conductivity * I unless conductivity_fn is set
  double kappa = 1.0;         // boundary heat transfer
  double bump_amplitude = 1.0;  // phi1 = A * b(|C - I|^2 / r^2)
  double bump_radius = 1.0;

  /// Optional scalar temperature dependence, K(theta) = conductivity_fn(theta) * I.
  std::function<double(double)> conductivity_fn;
};

/// Human-readable list of violated parameter inequalities for spatial dimension dim (empty when valid).
std::vector<std::string> check_params(const MaterialParams& mp, int dim);

struct ThermalPotentials {
  double phi_c;  // integral of the coupling energy from 0 to theta
  double W;      // 2 phi_c - theta * coupling energy
};

/// Closed-form constitutive functions of the default model with their derivatives.
/// Immutable after construction; every method is a pure function of its arguments.
class MaterialModel {
 public:
  explicit MaterialModel(MaterialParams mp = {});

  [[nodiscard]] const MaterialParams& params() const { return mp_; }

  // ---- elastic core ----
  template <int Dim> double elastic_energy(const Tensor2<Dim>& F) const;
  template <int Dim> Tensor2<Dim> elastic_stress(const Tensor2<Dim>& F) const;
  template <int Dim> Tensor4<Dim> elastic_hessian(const Tensor2<Dim>& F) const;

  // ---- coupling ----
  double a(double theta) const;
  double da(double theta) const;
  double dda(double theta) const;
  /// Primitive of a on [0, theta].
  double a_primitive(double theta) const;

  template <int Dim> double phi1(const Tensor2<Dim>& F) const;
  template <int Dim> Tensor2<Dim> phi1_gradient(const Tensor2<Dim>& F) const;
  template <int Dim> Tensor4<Dim> phi1_hessian(const Tensor2<Dim>& F) const;

  template <int Dim> double coupling_energy(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> Tensor2<Dim> coupling_stress(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> Tensor4<Dim> coupling_hessian(const Tensor2<Dim>& F, double theta) const;
  /// d/dtheta of the coupling energy.
  template <int Dim> double coupling_dtheta(const Tensor2<Dim>& F, double theta) const;

  template <int Dim> double enthalpy(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> double enthalpy_inverse(const Tensor2<Dim>& F, double w, double tol = 1e-13) const;
  template <int Dim> double heat_capacity(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> ThermalPotentials thermal_test_potentials(const Tensor2<Dim>& F, double theta) const;
  /// d/dF of phi_c.
  template <int Dim> Tensor2<Dim> coupling_potential_stress(const Tensor2<Dim>& F, double theta) const;

  // Extensions to theta < 0 used by the thermal minimization: second-order Taylor models at 0.
  // They coincide with the functions above for theta >= 0.
  template <int Dim> double W_ext(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> double enthalpy_ext(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> double heat_capacity_ext(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> Tensor2<Dim> coupling_potential_stress_ext(const Tensor2<Dim>& F, double theta) const;
  template <int Dim> Tensor2<Dim> coupling_stress_ext(const Tensor2<Dim>& F, double theta) const;
  /// d/dtheta of coupling_stress_ext.
  template <int Dim> Tensor2<Dim> coupling_stress_dtheta_ext(const Tensor2<Dim>& F, double theta) const;

  // ---- hyperstress ----
  template <int Dim> double hyperstress_energy(const Tensor3<Dim>& G) const;
  template <int Dim> Tensor3<Dim> hyperstress(const Tensor3<Dim>& G) const;
  template <int Dim> Tensor6<Dim> hyperstress_hessian(const Tensor3<Dim>& G) const;

  // ---- viscosity ----
  template <int Dim> double viscous_potential(const Tensor2<Dim>& C, const Tensor2<Dim>& Cdot, double theta) const;
  template <int Dim> Tensor2<Dim> viscous_stress(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double theta) const;
  template <int Dim> double dissipation_rate(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double theta) const;
  template <int Dim>
  double regularized_rate(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double theta, double eps) const;
  static double regularize(double xi, double eps) { return xi / (1.0 + eps * xi); }

  // ---- heat conduction ----
  template <int Dim> Tensor2<Dim> conductivity(double theta) const;
  template <int Dim> Tensor2<Dim> pullback_conductivity(const Tensor2<Dim>& F, double theta) const;

 private:
  MaterialParams mp_;
};

}  // namespace kvt
