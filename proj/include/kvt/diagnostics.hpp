#pragma once

#include "kvt/scheme.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace kvt {

/// Discrete mechanical energy identity of one step (summed over substeps):
/// lhs = dM + 2 tau R + (eps / tau)|grad dy|^2 + int dphi/dF(F^k, theta^{k-1}) : grad dy - L . dy.
/// Exactly lhs = convex_defect + DJ(y^k)[dy], where convex_defect = M^k - M^{k-1} - DM(y^k)[dy] <= Lambda |grad dy|^2.
struct MechEnergyCheck {
  double lhs = 0.0;
  double convex_defect = 0.0;
  double slack = 0.0;   // sum of Lambda_k |grad dy|^2 with Lambda_k from estimate_lambda(y^k, y^{k-1})
  double lambda = 0.0;  // largest Lambda_k over the substeps
  double solver = 0.0;  // DJ(y^k)[dy]
  double net = 0.0;     // lhs - convex_defect
  double scale = 0.0;   // max(|M^k|, |L . dy|, 2 tau R)
  bool ok = true;       // |net| <= tol * scale and convex_defect <= slack + tol * scale
};

/// Itemized total energy ledger of one step: dE = ext_power - boundary_heat - xi_gap - eps_dissipation
/// + coupling_mismatch + convex_defect + clamp_defect + net, with net = DJ(y^k)[dy] + tau * (heat residual tested with 1).
struct EnergyLedger {
  double dE = 0.0;
  double ext_power = 0.0;
  double boundary_heat = 0.0;
  double xi_gap = 0.0;  // tau * int (xi - xi_reg) >= 0
  double eps_dissipation = 0.0;
  double dissipation = 0.0;  // isothermal mode: tau * int xi takes the place of xi_gap
  double coupling_mismatch = 0.0;
  double convex_defect = 0.0;
  double clamp_defect = 0.0;
  double solver_mech = 0.0;
  double solver_heat = 0.0;
  double net = 0.0;
  double scale = 0.0;  // max(|E^k|, |ext_power|, tau int xi)
  bool ok = true;
};

struct HKOptions {
  /// Hoelder exponent of det grad y. 1: Lipschitz estimate (valid for the C^1 Hermite space);
  /// 0 selects the Sobolev exponent 1 - d/p.
  double lambda = 1.0;
  int neighbor_cells = 2;
};

struct HKCertificate {
  double bound = 0.0;
  double C1 = 0.0;  // |grad y|_{L^s} + |1/det|_{L^q} + |grad^2 y|_{L^p}
  double C2 = 0.0;  // estimated Hoelder constant of det grad y
  double lambda = 1.0;
  double c3 = 0.0;
  double r_star = 0.0;
  double alpha_star = 0.0;
  double energy = 0.0;  // M(y)
  double measured_min_det = 0.0;
};

template <int Dim>
HKCertificate healey_kroemer_certificate(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                         double C_M, const HKOptions& opt = {});

struct KornOptions {
  int block = 4;
  int max_iter = 400;
  double tol = 1e-12;
};

/// Smallest generalized eigenvalue of (int |F^T grad v + grad v^T F|^2, |v|_{H^1}^2) over v = 0 on Dirichlet faces.
template <int Dim>
double korn_constant(const StructuredGrid<Dim>& grid, const std::vector<Tensor2<Dim>>& F, const KornOptions& opt = {});

template <int Dim>
MechEnergyCheck mechanical_energy_check(const Trajectory<Dim>& traj, int k, double tol = 1e-8);

template <int Dim>
EnergyLedger total_energy_check(const Trajectory<Dim>& traj, int k, double tol = 1e-8);

struct EntropyProduction {
  double value = 0.0;
  int excluded = 0;  // quadrature points with theta <= theta_floor
};

constexpr double kThetaFloor = 1e-12;

/// tau * int (xi_reg / theta + K grad theta . grad theta / theta^2) over step k.
template <int Dim>
EntropyProduction entropy_production(const Trajectory<Dim>& traj, int k);

/// int (a'(theta) phi1(F) + c log theta); theta floored at kThetaFloor.
template <int Dim>
double total_entropy(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const State& s);

struct AprioriRow {
  int step = 0;
  double y_W2p = 0.0;        // (int |y|^p + |grad y|^p + |grad^2 y|^p)^{1/p}
  double rate_L2 = 0.0;      // |grad (y^k - y^{k-1}) / tau|_{L^2}
  double min_det = 0.0;
  double theta_L2 = 0.0;
  double theta_H1 = 0.0;
  double wdot_dual = 0.0;    // |(w^k - w^{k-1}) / tau|_{(H^1)^*}
};

template <int Dim>
std::vector<AprioriRow> apriori_monitor(const Trajectory<Dim>& traj);

/// Space-time test pair (z, v): z(t, x) = eta(t) zeta(x) vector valued, zero on Dirichlet faces;
/// v(t, x) = rho(t) vartheta(x) with rho(T) = 0.
template <int Dim>
struct TestPair {
  NodalField zeta;
  NodalField vartheta;
  std::function<double(double)> eta;
  std::function<double(double)> rho;
  std::function<double(double)> drho;
};

/// Deterministic bank of n pairs built from smooth fields interpolated on the grid; seed picks the phases.
template <int Dim>
std::vector<TestPair<Dim>> make_test_bank(const StructuredGrid<Dim>& grid, double T, int n = 10,
                                          std::uint64_t seed = 1);

struct WeakResiduals {
  double mech = 0.0;  // Euclidean norm over the bank
  double heat = 0.0;
  std::vector<double> mech_each, heat_each;
};

/// Residuals of the weak momentum and heat equations of the regularized system on the affine interpolants.
template <int Dim>
WeakResiduals weak_residuals(const Trajectory<Dim>& traj, const std::vector<TestPair<Dim>>& bank);

struct StepDiagnostics {
  int step = 0;
  double t = 0.0;
  double M = 0.0;
  double H = 0.0;
  double Phi_cpl = 0.0;
  double W = 0.0;
  double E = 0.0;
  double xi_step = 0.0;
  double xi_reg_step = 0.0;
  double ext_power = 0.0;
  double boundary_heat = 0.0;
  double entropy_prod = 0.0;
  int entropy_excluded = 0;
  double entropy_total = 0.0;
  double min_detF = 0.0;
  double hk_bound = 0.0;
  double korn_const = std::numeric_limits<double>::quiet_NaN();  // NaN where not evaluated
  double mech_residual = 0.0;
  double heat_residual = 0.0;
  double energy_gap_total = 0.0;
  double min_theta = 0.0;
  double min_accepted_det = 0.0;
  double descent = 0.0;          // min over substeps of functional_prev - functional_value
  double enthalpy_mismatch = 0.0;  // max |w - enthalpy(F, theta^+)|
  MechEnergyCheck mech;
  EnergyLedger ledger;
};

struct DiagnosticsOptions {
  int korn_every = 10;  // 0: never; the last step is always included when > 0
  double C_M = 0.0;     // 0: the largest M along the trajectory
  HKOptions hk;
  KornOptions korn;
  double energy_tol = 1e-8;
  double tol_pos = 1e-10;
};

/// Rows k = 0 ... N (row 0 holds the initial energies).
template <int Dim>
std::vector<StepDiagnostics> diagnose(const Trajectory<Dim>& traj, const DiagnosticsOptions& opt = {});

struct Certificate {
  std::string name;
  bool passed = true;
  std::string detail;
};

/// Run-level certificates derived from the rows.
template <int Dim>
std::vector<Certificate> certify(const Trajectory<Dim>& traj, const std::vector<StepDiagnostics>& rows,
                                 const DiagnosticsOptions& opt = {});

/// Trend checks of a refinement study: Cauchy differences decrease under tau-halving at every eps; at every
/// tau the eps-rate term and |xi - xi_reg|_{L^1} decrease with eps and the eps-rate term of the smallest eps is
/// at most eps_fraction of the dissipation. A check is omitted when its list has a single entry.
std::vector<Certificate> refinement_certificates(const RefinementReport& rep, double eps_fraction = 1e-3);

}  // namespace kvt
