#include "kvt/material.hpp"

#include "kvt/errors.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace kvt {

namespace {

constexpr double kThetaTiny = 1e-300;

template <int Dim>
double checked_det(const Tensor2<Dim>& F, const char* where) {
  const double J = F.determinant();
  if (!(J > 0.0)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: det F = %.6g <= 0", where, J);
    throw NonphysicalState(buf);
  }
  return J;
}

void check_theta(double theta, const char* where) {
  if (!(theta >= 0.0)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: temperature %.6g < 0", where, theta);
    throw DomainError(buf);
  }
}

double xlogx(double x) { return x < kThetaTiny ? 0.0 : x * std::log(x); }

std::string fmt(const char* f, double a) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

/// Smooth bump b(u) = exp(1 - 1/(1-u)) on u < 1, zero otherwise, with b(0) = 1.
struct Bump {
  double b, db, ddb;
};

Bump bump(double u) {
  if (u >= 1.0) return {0.0, 0.0, 0.0};
  const double v = 1.0 / (1.0 - u);
  const double b = std::exp(1.0 - v);
  if (b == 0.0) return {0.0, 0.0, 0.0};
  const double v2 = v * v;
  return {b, -v2 * b, (v2 * v2 - 2.0 * v2 * v) * b};
}

}  // namespace

std::vector<std::string> check_params(const MaterialParams& mp, int dim) {
  std::vector<std::string> out;
  const double d = dim;
  if (dim != 2 && dim != 3) out.push_back("dimension must be 2 or 3");
  if (!(mp.s > 0)) out.push_back("s > 0 violated");
  if (!(mp.p > d)) out.push_back(fmt("p > d violated (needs p > %g)", d));
  if (!(mp.p > 2)) out.push_back("p > 2 violated");
  if (mp.p > d) {
    const double qmin = mp.p * d / (mp.p - d);
    if (!(mp.q >= qmin)) out.push_back(fmt("q ≥ pd/(p−d) violated (needs q ≥ %g)", qmin));
  }
  if (!(mp.c1 > 0)) out.push_back("c1 > 0 violated");
  if (!(mp.c2 > 0)) out.push_back("c2 > 0 violated");
  if (!(mp.h_coef > 0)) out.push_back("h_coef > 0 violated");
  if (!(mp.nu > 0)) out.push_back("nu > 0 violated");
  if (!(mp.c > 0)) out.push_back("c > 0 violated (heat capacity must stay positive)");
  if (!(mp.alpha > 0)) out.push_back("alpha > 0 violated");
  if (!(mp.conductivity > 0)) out.push_back("conductivity > 0 violated (K must be positive definite)");
  if (!(mp.kappa > 0)) out.push_back("kappa > 0 violated");
  if (!(mp.bump_amplitude >= 0)) out.push_back("bump_amplitude >= 0 violated (phi1 must be nonnegative)");
  if (!(mp.bump_radius > 0)) out.push_back("bump_radius > 0 violated");
  return out;
}

MaterialModel::MaterialModel(MaterialParams mp) : mp_(std::move(mp)) {}

// ---------------------------------------------------------------- elastic core

template <int Dim>
double MaterialModel::elastic_energy(const Tensor2<Dim>& F) const {
  const double J = checked_det<Dim>(F, "elastic_energy");
  return mp_.c1 * std::pow(F.norm(), mp_.s) + mp_.c2 * std::pow(J, -mp_.q);
}

template <int Dim>
Tensor2<Dim> MaterialModel::elastic_stress(const Tensor2<Dim>& F) const {
  const double J = checked_det<Dim>(F, "elastic_stress");
  const Tensor2<Dim> FinvT = F.inverse().transpose();
  return mp_.c1 * mp_.s * std::pow(F.norm(), mp_.s - 2.0) * F - mp_.q * mp_.c2 * std::pow(J, -mp_.q) * FinvT;
}

template <int Dim>
Tensor4<Dim> MaterialModel::elastic_hessian(const Tensor2<Dim>& F) const {
  const double J = checked_det<Dim>(F, "elastic_hessian");
  const Tensor2<Dim> FinvT = F.inverse().transpose();
  const double nF = F.norm();
  const double k1 = mp_.c1 * mp_.s * std::pow(nF, mp_.s - 2.0);
  const double k2 = mp_.c1 * mp_.s * (mp_.s - 2.0) * std::pow(nF, mp_.s - 4.0);
  const double k3 = mp_.q * mp_.c2 * std::pow(J, -mp_.q);
  const auto f = flatten<Dim>(F);
  const auto g = flatten<Dim>(FinvT);
  Tensor4<Dim> Hs = k2 * f * f.transpose() + k1 * Tensor4<Dim>::Identity() + k3 * mp_.q * g * g.transpose();
  // F^-T H^T F^-T: entry (ai, bj) = FinvT(a, j) * FinvT(b, i)
  for (int a = 0; a < Dim; ++a)
    for (int i = 0; i < Dim; ++i)
      for (int b = 0; b < Dim; ++b)
        for (int j = 0; j < Dim; ++j) Hs(a * Dim + i, b * Dim + j) += k3 * FinvT(a, j) * FinvT(b, i);
  return Hs;
}

// ---------------------------------------------------------------- coupling

double MaterialModel::a(double t) const { return std::pow(1.0 + t, -mp_.alpha); }
double MaterialModel::da(double t) const { return -mp_.alpha * std::pow(1.0 + t, -mp_.alpha - 1.0); }
double MaterialModel::dda(double t) const {
  return mp_.alpha * (mp_.alpha + 1.0) * std::pow(1.0 + t, -mp_.alpha - 2.0);
}
double MaterialModel::a_primitive(double t) const {
  if (std::abs(mp_.alpha - 1.0) < 1e-14) return std::log1p(t);
  return (std::pow(1.0 + t, 1.0 - mp_.alpha) - 1.0) / (1.0 - mp_.alpha);
}

template <int Dim>
double MaterialModel::phi1(const Tensor2<Dim>& F) const {
  if (mp_.bump_amplitude == 0.0) return 0.0;
  const Tensor2<Dim> E = F.transpose() * F - Tensor2<Dim>::Identity();
  const double r2 = mp_.bump_radius * mp_.bump_radius;
  return mp_.bump_amplitude * bump(E.squaredNorm() / r2).b;
}

template <int Dim>
Tensor2<Dim> MaterialModel::phi1_gradient(const Tensor2<Dim>& F) const {
  if (mp_.bump_amplitude == 0.0) return Tensor2<Dim>::Zero();
  const Tensor2<Dim> E = F.transpose() * F - Tensor2<Dim>::Identity();
  const double r2 = mp_.bump_radius * mp_.bump_radius;
  const Bump bb = bump(E.squaredNorm() / r2);
  return mp_.bump_amplitude * bb.db * (4.0 / r2) * (F * E);
}

template <int Dim>
Tensor4<Dim> MaterialModel::phi1_hessian(const Tensor2<Dim>& F) const {
  if (mp_.bump_amplitude == 0.0) return Tensor4<Dim>::Zero();
  const Tensor2<Dim> E = F.transpose() * F - Tensor2<Dim>::Identity();
  const double r2 = mp_.bump_radius * mp_.bump_radius;
  const Bump bb = bump(E.squaredNorm() / r2);
  if (bb.b == 0.0) return Tensor4<Dim>::Zero();
  const auto du = flatten<Dim>(Tensor2<Dim>((4.0 / r2) * (F * E)));
  Tensor4<Dim> Hs = bb.ddb * du * du.transpose();
  // second derivative of u: H -> (4/r^2) (H E + F (H^T F + F^T H))
  Tensor4<Dim> D2u = Tensor4<Dim>::Zero();
  for (int b = 0; b < Dim; ++b)
    for (int j = 0; j < Dim; ++j) {
      Tensor2<Dim> H = Tensor2<Dim>::Zero();
      H(b, j) = 1.0;
      const Tensor2<Dim> col = (4.0 / r2) * (H * E + F * (H.transpose() * F + F.transpose() * H));
      D2u.col(b * Dim + j) = flatten<Dim>(col);
    }
  Hs += bb.db * D2u;
  return mp_.bump_amplitude * Hs;
}

template <int Dim>
double MaterialModel::coupling_energy(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "coupling_energy");
  checked_det<Dim>(F, "coupling_energy");
  return (a(0.0) - a(theta)) * phi1<Dim>(F) + mp_.c * (theta - xlogx(theta));
}

template <int Dim>
Tensor2<Dim> MaterialModel::coupling_stress(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "coupling_stress");
  checked_det<Dim>(F, "coupling_stress");
  return (a(0.0) - a(theta)) * phi1_gradient<Dim>(F);
}

template <int Dim>
Tensor4<Dim> MaterialModel::coupling_hessian(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "coupling_hessian");
  return (a(0.0) - a(theta)) * phi1_hessian<Dim>(F);
}

template <int Dim>
double MaterialModel::coupling_dtheta(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "coupling_dtheta");
  if (theta < kThetaTiny) return std::numeric_limits<double>::infinity();
  return -da(theta) * phi1<Dim>(F) - mp_.c * std::log(theta);
}

template <int Dim>
double MaterialModel::enthalpy(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "enthalpy");
  return mp_.c * theta + (theta * da(theta) - a(theta) + a(0.0)) * phi1<Dim>(F);
}

template <int Dim>
double MaterialModel::enthalpy_inverse(const Tensor2<Dim>& F, double w, double tol) const {
  if (!(w >= 0.0)) throw DomainError(fmt("enthalpy_inverse: w = %.6g < 0", w));
  if (w == 0.0) return 0.0;
  const double f1 = phi1<Dim>(F);
  auto wf = [&](double t) { return mp_.c * t + (t * da(t) - a(t) + a(0.0)) * f1; };
  // w(theta) >= c theta, so the root lies in [0, w/c]
  double lo = 0.0, hi = w / mp_.c;
  double t = hi;
  for (int it = 0; it < 200; ++it) {
    const double r = wf(t) - w;
    if (std::abs(r) <= tol * std::max(1.0, w)) return t;
    if (r > 0) hi = t; else lo = t;
    const double slope = mp_.c + t * dda(t) * f1;
    double tn = t - r / slope;
    if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
    if (hi - lo <= 4 * std::numeric_limits<double>::epsilon() * hi) return tn;
    t = tn;
  }
  return t;
}

template <int Dim>
double MaterialModel::heat_capacity(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "heat_capacity");
  return mp_.c + theta * dda(theta) * phi1<Dim>(F);
}

template <int Dim>
ThermalPotentials MaterialModel::thermal_test_potentials(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "thermal_test_potentials");
  const double f1 = phi1<Dim>(F);
  const double t2 = theta * theta;
  const double tlog = theta < kThetaTiny ? 0.0 : t2 * std::log(theta);
  const double phic = f1 * (a(0.0) * theta - a_primitive(theta)) + mp_.c * (0.75 * t2 - 0.5 * tlog);
  const double phi = (a(0.0) - a(theta)) * f1 + mp_.c * (theta - xlogx(theta));
  return {phic, 2.0 * phic - theta * phi};
}

template <int Dim>
Tensor2<Dim> MaterialModel::coupling_potential_stress(const Tensor2<Dim>& F, double theta) const {
  check_theta(theta, "coupling_potential_stress");
  return (a(0.0) * theta - a_primitive(theta)) * phi1_gradient<Dim>(F);
}

template <int Dim>
double MaterialModel::W_ext(const Tensor2<Dim>& F, double theta) const {
  if (theta >= 0.0) return thermal_test_potentials<Dim>(F, theta).W;
  return 0.5 * mp_.c * theta * theta;
}

template <int Dim>
double MaterialModel::enthalpy_ext(const Tensor2<Dim>& F, double theta) const {
  if (theta >= 0.0) return enthalpy<Dim>(F, theta);
  return mp_.c * theta;
}

template <int Dim>
double MaterialModel::heat_capacity_ext(const Tensor2<Dim>& F, double theta) const {
  if (theta >= 0.0) return heat_capacity<Dim>(F, theta);
  return mp_.c;
}

template <int Dim>
Tensor2<Dim> MaterialModel::coupling_potential_stress_ext(const Tensor2<Dim>& F, double theta) const {
  if (theta >= 0.0) return coupling_potential_stress<Dim>(F, theta);
  return (-da(0.0) * 0.5 * theta * theta) * phi1_gradient<Dim>(F);
}

template <int Dim>
Tensor2<Dim> MaterialModel::coupling_stress_ext(const Tensor2<Dim>& F, double theta) const {
  if (theta >= 0.0) return (a(0.0) - a(theta)) * phi1_gradient<Dim>(F);
  return (-da(0.0) * theta) * phi1_gradient<Dim>(F);
}

template <int Dim>
Tensor2<Dim> MaterialModel::coupling_stress_dtheta_ext(const Tensor2<Dim>& F, double theta) const {
  return -da(std::max(theta, 0.0)) * phi1_gradient<Dim>(F);
}

// ---------------------------------------------------------------- hyperstress

template <int Dim>
double MaterialModel::hyperstress_energy(const Tensor3<Dim>& G) const {
  return mp_.h_coef * std::pow(G.norm(), mp_.p);
}

template <int Dim>
Tensor3<Dim> MaterialModel::hyperstress(const Tensor3<Dim>& G) const {
  const double n = G.norm();
  if (n == 0.0) return Tensor3<Dim>::Zero();
  return mp_.h_coef * mp_.p * std::pow(n, mp_.p - 2.0) * G;
}

template <int Dim>
Tensor6<Dim> MaterialModel::hyperstress_hessian(const Tensor3<Dim>& G) const {
  const double n = G.norm();
  if (n == 0.0) return Tensor6<Dim>::Zero();
  const double k = mp_.h_coef * mp_.p * std::pow(n, mp_.p - 2.0);
  return k * Tensor6<Dim>::Identity() + (k * (mp_.p - 2.0) / (n * n)) * G * G.transpose();
}

// ---------------------------------------------------------------- viscosity

template <int Dim>
double MaterialModel::viscous_potential(const Tensor2<Dim>& C, const Tensor2<Dim>& Cdot, double) const {
  const double tolC = 1e-12 * std::max(1.0, C.norm());
  const double tolD = 1e-12 * std::max(1.0, Cdot.norm());
  if ((C - C.transpose()).norm() > tolC || (Cdot - Cdot.transpose()).norm() > tolD)
    throw ContractViolation("viscous_potential: C and Cdot must be symmetric");
  return 0.5 * mp_.nu * Cdot.squaredNorm();
}

template <int Dim>
Tensor2<Dim> MaterialModel::viscous_stress(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double) const {
  checked_det<Dim>(F, "viscous_stress");
  const Tensor2<Dim> Cdot = Fdot.transpose() * F + F.transpose() * Fdot;
  return 2.0 * mp_.nu * F * Cdot;
}

template <int Dim>
double MaterialModel::dissipation_rate(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double) const {
  checked_det<Dim>(F, "dissipation_rate");
  const Tensor2<Dim> Cdot = Fdot.transpose() * F + F.transpose() * Fdot;
  return mp_.nu * Cdot.squaredNorm();
}

template <int Dim>
double MaterialModel::regularized_rate(const Tensor2<Dim>& F, const Tensor2<Dim>& Fdot, double theta,
                                       double eps) const {
  if (!(eps >= 0.0)) throw DomainError("regularized_rate: eps < 0");
  return regularize(dissipation_rate<Dim>(F, Fdot, theta), eps);
}

// ---------------------------------------------------------------- conduction

template <int Dim>
Tensor2<Dim> MaterialModel::conductivity(double theta) const {
  const double k = mp_.conductivity_fn ? mp_.conductivity_fn(theta) : mp_.conductivity;
  return k * Tensor2<Dim>::Identity();
}

template <int Dim>
Tensor2<Dim> MaterialModel::pullback_conductivity(const Tensor2<Dim>& F, double theta) const {
  const double J = checked_det<Dim>(F, "pullback_conductivity");
  const Tensor2<Dim> Finv = F.inverse();
  const Tensor2<Dim> K = J * Finv * conductivity<Dim>(theta) * Finv.transpose();
  return 0.5 * (K + K.transpose());
}

// ---------------------------------------------------------------- instantiation

#define KVT_INSTANTIATE(D)                                                                              \
  template double MaterialModel::elastic_energy<D>(const Tensor2<D>&) const;                            \
  template Tensor2<D> MaterialModel::elastic_stress<D>(const Tensor2<D>&) const;                        \
  template Tensor4<D> MaterialModel::elastic_hessian<D>(const Tensor2<D>&) const;                       \
  template double MaterialModel::phi1<D>(const Tensor2<D>&) const;                                      \
  template Tensor2<D> MaterialModel::phi1_gradient<D>(const Tensor2<D>&) const;                         \
  template Tensor4<D> MaterialModel::phi1_hessian<D>(const Tensor2<D>&) const;                          \
  template double MaterialModel::coupling_energy<D>(const Tensor2<D>&, double) const;                   \
  template Tensor2<D> MaterialModel::coupling_stress<D>(const Tensor2<D>&, double) const;               \
  template Tensor4<D> MaterialModel::coupling_hessian<D>(const Tensor2<D>&, double) const;              \
  template double MaterialModel::coupling_dtheta<D>(const Tensor2<D>&, double) const;                   \
  template double MaterialModel::enthalpy<D>(const Tensor2<D>&, double) const;                          \
  template double MaterialModel::enthalpy_inverse<D>(const Tensor2<D>&, double, double) const;          \
  template double MaterialModel::heat_capacity<D>(const Tensor2<D>&, double) const;                     \
  template ThermalPotentials MaterialModel::thermal_test_potentials<D>(const Tensor2<D>&, double) const; \
  template Tensor2<D> MaterialModel::coupling_potential_stress<D>(const Tensor2<D>&, double) const;     \
  template double MaterialModel::W_ext<D>(const Tensor2<D>&, double) const;                             \
  template double MaterialModel::enthalpy_ext<D>(const Tensor2<D>&, double) const;                      \
  template double MaterialModel::heat_capacity_ext<D>(const Tensor2<D>&, double) const;                 \
  template Tensor2<D> MaterialModel::coupling_potential_stress_ext<D>(const Tensor2<D>&, double) const; \
  template Tensor2<D> MaterialModel::coupling_stress_ext<D>(const Tensor2<D>&, double) const;           \
  template Tensor2<D> MaterialModel::coupling_stress_dtheta_ext<D>(const Tensor2<D>&, double) const;    \
  template double MaterialModel::hyperstress_energy<D>(const Tensor3<D>&) const;                        \
  template Tensor3<D> MaterialModel::hyperstress<D>(const Tensor3<D>&) const;                           \
  template Tensor6<D> MaterialModel::hyperstress_hessian<D>(const Tensor3<D>&) const;                   \
  template double MaterialModel::viscous_potential<D>(const Tensor2<D>&, const Tensor2<D>&, double) const; \
  template Tensor2<D> MaterialModel::viscous_stress<D>(const Tensor2<D>&, const Tensor2<D>&, double) const; \
  template double MaterialModel::dissipation_rate<D>(const Tensor2<D>&, const Tensor2<D>&, double) const; \
  template double MaterialModel::regularized_rate<D>(const Tensor2<D>&, const Tensor2<D>&, double, double) const; \
  template Tensor2<D> MaterialModel::conductivity<D>(double) const;                                     \
  template Tensor2<D> MaterialModel::pullback_conductivity<D>(const Tensor2<D>&, double) const;

KVT_INSTANTIATE(2)
KVT_INSTANTIATE(3)

#undef KVT_INSTANTIATE

}  // namespace kvt
