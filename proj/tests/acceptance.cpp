// Acceptance suite: runs the twelve acceptance criteria at desk scale (d = 2, 16x16 grids) and prints one
// PASS/FAIL line per criterion. The exit status is 0 only when the failing criteria are exactly the ones
// listed with --expect-fail, so a known red criterion stays visible without hiding regressions elsewhere.

#include "CLI11.hpp"
#include "kvt/diagnostics.hpp"
#include "kvt/errors.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

using namespace kvt;
using kvt::test::fd1;
using kvt::test::fd_grad;
using kvt::test::fd_jac;
using kvt::test::Gen;

namespace {

constexpr int kCells = 16;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v, int digits = 3) {
  char b[40];
  std::snprintf(b, sizeof b, "%.*g", digits, v);
  return b;
}

void progress(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

struct Outcome {
  int id = 0;
  std::string name;
  bool passed = true;
  std::string detail;
};

/// Relative error with values below `floor` compared on an absolute scale of floor.
template <typename A, typename B>
double rel(const A& a, const B& b, double floor = 1e-3) {
  return kvt::test::rel_err(a, b, floor);
}

/// Worst error of a named family of derivative checks.
struct FdTally {
  std::map<std::string, std::pair<int, double>> items;  // name -> (points, worst)
  void add(const std::string& name, double err) {
    auto& [n, w] = items[name];
    ++n;
    w = std::max(w, std::isnan(err) ? kInf : err);
  }
};

std::shared_ptr<const Scenario<2>> scenario(const std::string& name, double T = -1.0, int cells = kCells) {
  auto p = preset(name);
  p.spec.cells = {cells, cells};
  if (T > 0) p.spec.T = T;
  return std::make_shared<const Scenario<2>>(make_scenario<2>(p.spec));
}

Trajectory<2> simulate(const std::string& name, double tau, double eps, double T = -1.0) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOptions o;
  o.tau = tau;
  o.eps = eps;
  auto tr = run<2>(scenario(name, T), o);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  progress(name + " tau " + fmt(tau) + " eps " + fmt(eps) + ": " + std::to_string(tr.num_steps()) + " steps, " +
           fmt(s) + " s");
  return tr;
}

/// Accumulates the step-level audits of criteria 4 and 5 over every trajectory of the suite.
struct MatrixAudit {
  int trajectories = 0;
  int substeps = 0;
  int descent_violations = 0;
  double worst_increase = 0.0;
  double min_theta = kInf;
  double min_accepted_det = kInf;
  int hk_checked = 0;
  int hk_violations = 0;

  void add(const Trajectory<2>& tr, const std::vector<StepDiagnostics>* rows = nullptr) {
    ++trajectories;
    for (const auto& st : tr.steps)
      for (const auto& r : st.sub) {
        ++substeps;
        if (!(r.functional_value <= r.functional_prev)) {
          ++descent_violations;
          worst_increase = std::max(worst_increase, r.functional_value - r.functional_prev);
        }
        min_theta = std::min(min_theta, r.min_theta);
        min_accepted_det = std::min(min_accepted_det, r.min_accepted_det);
      }
    if (rows) {
      for (const auto& r : *rows) {
        ++hk_checked;
        if (!(r.hk_bound <= r.min_detF)) ++hk_violations;
      }
      return;
    }
    double C_M = 0.0;
    std::vector<double> M;
    for (const auto& s : tr.snapshots) {
      M.push_back(mechanical_energy(tr.grid(), tr.material(), s.y));
      C_M = std::max(C_M, M.back());
    }
    for (const auto& s : tr.snapshots) {
      const auto c = healey_kroemer_certificate(tr.grid(), tr.material(), s.y, C_M);
      ++hk_checked;
      if (!(c.bound <= c.measured_min_det)) ++hk_violations;
    }
  }
};

// ---- 1 ----

Outcome gradient_consistency() {
  progress("1: derivative checks");
  FdTally t;
  MaterialModel m;
  Gen g(1001);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const auto F = g.deformation_gradient<2>(0.4);
    const double th = g.uniform(0.05, 5.0);
    t.add("elastic_stress", rel(m.elastic_stress<2>(F), fd_grad<2>([&](const Tensor2<2>& X) { return m.elastic_energy<2>(X); }, F, h)));
    t.add("elastic_hessian", rel(m.elastic_hessian<2>(F), fd_jac<2>([&](const Tensor2<2>& X) { return m.elastic_stress<2>(X); }, F, h)));
    t.add("phi1_gradient", rel(m.phi1_gradient<2>(F), fd_grad<2>([&](const Tensor2<2>& X) { return m.phi1<2>(X); }, F, h)));
    t.add("phi1_hessian", rel(m.phi1_hessian<2>(F), fd_jac<2>([&](const Tensor2<2>& X) { return m.phi1_gradient<2>(X); }, F, h)));
    t.add("coupling_stress", rel(m.coupling_stress<2>(F, th), fd_grad<2>([&](const Tensor2<2>& X) { return m.coupling_energy<2>(X, th); }, F, h)));
    t.add("coupling_hessian", rel(m.coupling_hessian<2>(F, th), fd_jac<2>([&](const Tensor2<2>& X) { return m.coupling_stress<2>(X, th); }, F, h)));
    t.add("coupling_dtheta", rel(m.coupling_dtheta<2>(F, th), fd1([&](double x) { return m.coupling_energy<2>(F, x); }, th, h)));
    t.add("heat_capacity", rel(m.heat_capacity<2>(F, th), fd1([&](double x) { return m.enthalpy<2>(F, x); }, th, h)));
    t.add("W_theta", rel(m.enthalpy<2>(F, th), fd1([&](double x) { return m.thermal_test_potentials<2>(F, x).W; }, th, h)));
    t.add("phi_c_F", rel(m.coupling_potential_stress<2>(F, th),
                         fd_grad<2>([&](const Tensor2<2>& X) { return m.thermal_test_potentials<2>(X, th).phi_c; }, F, h)));
    t.add("a_prime", rel(m.da(th), fd1([&](double x) { return m.a(x); }, th, h)));
    t.add("a_second", rel(m.dda(th), fd1([&](double x) { return m.da(x); }, th, h)));
    // the viscous stress is half the Fdot-gradient of the quadratic dissipation rate
    const auto Fd = g.matrix<2>(1.0);
    t.add("viscous_stress", rel(Tensor2<2>(2.0 * m.viscous_stress<2>(F, Fd, th)),
                                fd_grad<2>([&](const Tensor2<2>& X) { return m.dissipation_rate<2>(F, X, th); }, Fd, h)));
    Tensor3<2> G;
    for (int i = 0; i < 8; ++i) G(i) = g.uniform(-1, 1);
    Tensor3<2> fdG;
    Tensor6<2> JG;
    for (int i = 0; i < 8; ++i) {
      Tensor3<2> p = G, q = G;
      p(i) += h;
      q(i) -= h;
      fdG(i) = (m.hyperstress_energy<2>(p) - m.hyperstress_energy<2>(q)) / (2 * h);
      JG.col(i) = (m.hyperstress<2>(p) - m.hyperstress<2>(q)) / (2 * h);
    }
    t.add("hyperstress", rel(m.hyperstress<2>(G), fdG));
    t.add("hyperstress_hessian", rel(m.hyperstress_hessian<2>(G), JG));
    const auto F3 = g.deformation_gradient<3>(0.3);
    t.add("elastic_stress_3d", rel(m.elastic_stress<3>(F3), fd_grad<3>([&](const Tensor2<3>& X) { return m.elastic_energy<3>(X); }, F3, h)));
    t.add("elastic_hessian_3d", rel(m.elastic_hessian<3>(F3), fd_jac<3>([&](const Tensor2<3>& X) { return m.elastic_stress<3>(X); }, F3, h)));
  }

  // assembled discrete gradients, directional derivatives along random free directions
  auto directional = [&](const std::string& name, const std::function<double(const NodalField&)>& f, const NodalField& x,
                         const NodalField& gr, const NodalField& d) {
    const double fd = (f(x + h * d) - f(x - h * d)) / (2 * h);
    const double an = gr.dot(d);
    // near-orthogonal directions are measured against |gradient| |d|
    t.add(name, std::abs(fd - an) / std::max(std::abs(an), 1e-3 * gr.norm() * d.norm()));
  };
  auto perturb = [&](const StructuredGrid<2>& grid, const NodalField& y, double amp) {
    NodalField z = y;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (!grid.dirichlet_mask()[i]) z(i) += g.uniform(-amp, amp);
    return z;
  };
  auto direction = [&](const StructuredGrid<2>& grid, Eigen::Index n, bool vector_field) {
    NodalField d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = g.uniform(-1, 1);
    if (vector_field) grid.eliminate_dirichlet(d);
    return d;
  };

  StructuredGrid<2> grid({4, 4}, {1.0, 1.0});
  {
    std::vector<Vec<2>> bulk(grid.num_qp()), trac(grid.num_face_qp());
    for (auto& b : bulk) b = Vec<2>(g.uniform(-1, 1), g.uniform(-1, 1));
    for (auto& b : trac) b = Vec<2>(g.uniform(-1, 1), g.uniform(-1, 1));
    const NodalField L = grid.assemble_load(bulk, trac);
    auto energy = [&](const NodalField& y) {
      auto k = grid.eval_kinematics(y);
      std::vector<double> d(grid.num_qp());
      for (int q = 0; q < grid.num_qp(); ++q) d[q] = m.elastic_energy<2>(k.F[q]) + m.hyperstress_energy<2>(k.G[q]);
      return grid.assemble_scalar(d) - L.dot(y);
    };
    for (int k = 0; k < 100; ++k) {
      const NodalField y = perturb(grid, grid.identity(), 0.02);
      auto kin = grid.eval_kinematics(y);
      std::vector<Tensor2<2>> s(grid.num_qp());
      std::vector<Tensor3<2>> hs(grid.num_qp());
      for (int q = 0; q < grid.num_qp(); ++q) {
        s[q] = m.elastic_stress<2>(kin.F[q]);
        hs[q] = m.hyperstress<2>(kin.G[q]);
      }
      directional("grid_assembled_gradient", energy, y, grid.assemble_gradient(s, hs, bulk, trac),
                  direction(grid, y.size(), true));
    }
  }
  for (bool coupled : {true, false}) {
    MechIncrement<2> inc;
    inc.grid = &grid;
    inc.material = &m;
    inc.y_prev = perturb(grid, grid.identity(), 0.02);
    inc.theta_prev = grid.constant_scalar(0.4);
    inc.tau = 0.05;
    inc.eps = 0.02;
    inc.coupled = coupled;
    inc.load = grid.assemble_load(std::vector<Vec<2>>(grid.num_qp(), Vec<2>(0.1, 0.3)), {});
    MechProblem<2> p(inc);
    const std::string name = coupled ? "mech_gradient" : "mech_gradient_isothermal";
    for (int k = 0; k < 100; ++k) {
      const NodalField y = perturb(grid, inc.y_prev, 0.02);
      directional(name, [&](const NodalField& x) { return p.value(x); }, y, p.gradient(y), direction(grid, y.size(), true));
    }
    // Hessian against differences of the gradient on the free coefficients
    const auto& fr = p.free_dofs();
    for (int k = 0; k < 100; ++k) {
      const NodalField y = perturb(grid, inc.y_prev, 0.02);
      const NodalField d = direction(grid, y.size(), true);
      const NodalField gd = (p.gradient(y + h * d) - p.gradient(y - h * d)) / (2 * h);
      Eigen::VectorXd df(fr.size()), gdf(fr.size());
      for (std::size_t i = 0; i < fr.size(); ++i) {
        df(static_cast<Eigen::Index>(i)) = d(fr[i]);
        gdf(static_cast<Eigen::Index>(i)) = gd(fr[i]);
      }
      t.add(coupled ? "mech_hessian" : "mech_hessian_isothermal", rel(Eigen::VectorXd(p.hessian(y) * df), gdf));
    }
  }
  {
    HeatIncrement<2> inc;
    inc.grid = &grid;
    inc.material = &m;
    inc.y_prev = perturb(grid, grid.identity(), 0.03);
    inc.y_new = perturb(grid, inc.y_prev, 0.03);
    NodalField th0(grid.ndofs(1));
    constexpr int nd = StructuredGrid<2>::kNodeDofs;
    auto scalar = [&](double lo, double hi) {
      NodalField s(grid.ndofs(1));
      for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = (i % nd == 0) ? g.uniform(lo, hi) : g.uniform(-0.1, 0.1);
      return s;
    };
    inc.theta_prev = scalar(0.1, 1.0);
    inc.w_prev = enthalpy_field(grid, m, inc.y_prev, inc.theta_prev);
    inc.tau = 0.05;
    inc.eps = 0.01;
    inc.theta_b.resize(grid.num_face_qp());
    for (auto& v : inc.theta_b) v = g.uniform(0.0, 1.0);
    HeatProblem<2> p(inc);
    for (int k = 0; k < 100; ++k) {
      // a fifth of the samples reach below zero to exercise the extension
      const NodalField th = scalar(k % 5 == 4 ? -0.3 : 0.05, 1.0);
      const NodalField d = direction(grid, th.size(), false);
      directional("heat_gradient", [&](const NodalField& x) { return p.value(x); }, th, p.gradient(th), d);
      const NodalField gd = (p.gradient(th + h * d) - p.gradient(th - h * d)) / (2 * h);
      t.add("heat_hessian", rel(NodalField(p.hessian(th) * d), gd));
    }
  }

  Outcome o{1, "gradient_consistency", true, ""};
  std::string worst_name;
  double worst = 0.0;
  int min_points = 1 << 30;
  for (const auto& [name, v] : t.items) {
    min_points = std::min(min_points, v.first);
    if (v.second > worst) {
      worst = v.second;
      worst_name = name;
    }
    if (!(v.second <= 1e-5)) {
      o.passed = false;
      o.detail += name + " " + fmt(v.second) + "; ";
    }
  }
  o.passed = o.passed && min_points >= 100;
  o.detail += std::to_string(t.items.size()) + " derivatives at >= " + std::to_string(min_points) +
              " points each, worst relative error " + fmt(worst) + " (" + worst_name + ")";
  return o;
}

// ---- 2 ----

Outcome frame_indifference() {
  progress("2: frame indifference");
  MaterialModel m;
  Gen g(1002);
  double worst = 0.0, worst_rigid = 0.0;
  std::string worst_name;
  auto note = [&](const std::string& name, double e) {
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };
  auto sample = [&](auto dim_tag) {
    constexpr int D = decltype(dim_tag)::value;
    const auto F = g.template deformation_gradient<D>(D == 2 ? 0.5 : 0.3);
    const auto R = g.template rotation<D>();
    const auto Fd = g.template matrix<D>(1.0);
    const double th = g.uniform(0.0, 4.0);
    const Tensor2<D> RF = R * F;
    // static: energies invariant, first Piola stresses covariant
    note("elastic_energy", rel(m.elastic_energy<D>(RF), m.elastic_energy<D>(F), 1e-12));
    note("coupling_energy", rel(m.coupling_energy<D>(RF, th), m.coupling_energy<D>(F, th), 1e-12));
    note("enthalpy", rel(m.enthalpy<D>(RF, th), m.enthalpy<D>(F, th), 1e-12));
    note("elastic_stress", rel(m.elastic_stress<D>(RF), Tensor2<D>(R * m.elastic_stress<D>(F)), 1e-12));
    note("coupling_stress", rel(m.coupling_stress<D>(RF, th), Tensor2<D>(R * m.coupling_stress<D>(F, th)), 1e-12));
    note("pullback_conductivity", rel(m.pullback_conductivity<D>(RF, th), m.pullback_conductivity<D>(F, th), 1e-12));
    // dynamic: R(t) = exp(t W) R0 so d/dt (R F) = W R F + R Fdot
    const Tensor2<D> W = g.template skew<D>();
    const Tensor2<D> RFd = W * RF + R * Fd;
    note("dissipation_rate", rel(m.dissipation_rate<D>(RF, RFd, th), m.dissipation_rate<D>(F, Fd, th), 1e-12));
    note("viscous_stress", rel(m.viscous_stress<D>(RF, RFd, th), Tensor2<D>(R * m.viscous_stress<D>(F, Fd, th)), 1e-12));
    // pure rigid rotation rate of the current configuration dissipates nothing
    const Tensor2<D> rig = W * F;
    const double scale = std::max(1.0, m.dissipation_rate<D>(F, Fd, th));
    worst_rigid = std::max(worst_rigid, m.dissipation_rate<D>(F, rig, th) / scale);
    worst_rigid = std::max(worst_rigid, m.viscous_stress<D>(F, rig, th).norm() / scale);
  };
  for (int k = 0; k < 1000; ++k) {
    sample(std::integral_constant<int, 2>{});
    sample(std::integral_constant<int, 3>{});
  }
  Outcome o{2, "frame_indifference", worst <= 1e-12 && worst_rigid <= 1e-12, ""};
  o.detail = "2000 samples (d = 2, 3), worst relative deviation " + fmt(worst) + " (" + worst_name +
             "), rigid-rate dissipation " + fmt(worst_rigid);
  return o;
}

// ---- 3 ----

Outcome equilibrium(MatrixAudit& audit) {
  progress("3: steady scenario");
  const auto p = preset("steady");
  auto tr = simulate("steady", p.tau, p.eps);
  DiagnosticsOptions dopt;
  dopt.korn_every = 0;
  const auto rows = diagnose(tr, dopt);
  audit.add(tr, &rows);
  double dy = 0.0, dth = 0.0, res = 0.0;
  for (const auto& s : tr.snapshots) {
    dy = std::max(dy, (s.y - tr.snapshots[0].y).lpNorm<Eigen::Infinity>());
    dth = std::max(dth, (s.theta - tr.snapshots[0].theta).lpNorm<Eigen::Infinity>());
  }
  for (const auto& r : rows) {
    res = std::max({res, r.mech_residual, r.heat_residual, std::abs(r.ledger.net), std::abs(r.mech.net)});
  }
  Outcome o{3, "equilibrium_preservation", tr.num_steps() >= 100 && dy <= 1e-12 && dth <= 1e-12 && res <= 1e-9, ""};
  o.detail = std::to_string(tr.num_steps()) + " steps on " + std::to_string(kCells) + "x" + std::to_string(kCells) +
             ": max |y - y0| " + fmt(dy) + ", max |theta - theta0| " + fmt(dth) + ", max balance residual " + fmt(res);
  return o;
}

// ---- 6 ----

Outcome enthalpy_laws(const std::vector<const std::vector<StepDiagnostics>*>& runs) {
  progress("6: enthalpy laws");
  MaterialModel m;
  Gen g(1006);
  int nonzero = 0;
  double lo = kInf, hi = 0.0, slo = kInf, shi = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const auto F = g.deformation_gradient<2>(0.5, 0.2);
    if (m.enthalpy<2>(F, 0.0) != 0.0) ++nonzero;
    const double t1 = g.uniform(1e-6, 10.0), t2 = g.uniform(1e-6, 10.0);
    const double w1 = m.enthalpy<2>(F, t1), w2 = m.enthalpy<2>(F, t2);
    lo = std::min(lo, w1 / t1);
    hi = std::max(hi, w1 / t1);
    const double cv = m.heat_capacity<2>(F, t1);
    slo = std::min({slo, cv, (w1 - w2) / (t1 - t2)});
    shi = std::max({shi, cv, (w1 - w2) / (t1 - t2)});
  }
  // one constant pair for both estimates
  const double eps_hat = std::min(lo, slo), K = std::max(hi, shi);
  double mismatch = 0.0;
  for (const auto* rows : runs)
    for (const auto& r : *rows) mismatch = std::max(mismatch, r.enthalpy_mismatch);
  Outcome o{6, "enthalpy_laws", nonzero == 0 && eps_hat > 0.0 && std::isfinite(K) && mismatch <= 1e-12, ""};
  o.detail = "w(F,0) != 0 at " + std::to_string(nonzero) + " of 10^4 samples; eps_hat " + fmt(eps_hat) + ", K " +
             fmt(K) + "; trajectory max |w - w(F,theta)| " + fmt(mismatch) + " over " + std::to_string(runs.size()) +
             " runs";
  return o;
}

// ---- 7 ----

Outcome energy_ledger(const std::vector<StepDiagnostics>& rows) {
  double worst = 0.0, min_gap = kInf;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& L = rows[k].ledger;
    worst = std::max(worst, std::abs(L.net) / L.scale);
    min_gap = std::min(min_gap, L.xi_gap);
  }
  Outcome o{7, "total_energy_ledger", rows.size() > 1 && worst <= 1e-8 && min_gap >= 0.0, ""};
  o.detail = "shear_pulse, " + std::to_string(rows.size() - 1) + " steps: worst itemized residual / scale " +
             fmt(worst) + ", min (xi - xi_reg) item " + fmt(min_gap);
  return o;
}

// ---- 8 ----

Outcome entropy(const std::vector<StepDiagnostics>& shear, const Trajectory<2>& ins,
                const std::vector<StepDiagnostics>& ins_rows) {
  double min_prod = kInf, min_increase = kInf;
  int excluded = 0;
  for (const auto* rows : {&shear, &ins_rows})
    for (std::size_t k = 1; k < rows->size(); ++k) {
      min_prod = std::min(min_prod, (*rows)[k].entropy_prod);
      excluded += (*rows)[k].entropy_excluded;
    }
  double prev = total_entropy(ins.grid(), ins.material(), ins.snapshots[0]);
  for (int k = 1; k <= ins.num_steps(); ++k) {
    const double s = total_entropy(ins.grid(), ins.material(), ins.snapshots[k]);
    min_increase = std::min(min_increase, s - prev);
    prev = s;
  }
  Outcome o{8, "entropy", min_prod >= 0.0 && min_increase >= -1e-9 && excluded == 0, ""};
  o.detail = "min step production " + fmt(min_prod) + " (shear_pulse, insulated_pulse), excluded points " +
             std::to_string(excluded) + "; insulated total entropy min step change " + fmt(min_increase);
  return o;
}

// ---- 9 ----

Outcome korn(const std::vector<StepDiagnostics>& shear_rows) {
  progress("9: Korn constants");
  auto identity = [](const StructuredGrid<2>& g) { return std::vector<Tensor2<2>>(g.num_qp(), Tensor2<2>::Identity()); };
  auto disc = [](const StructuredGrid<2>& g) {
    std::vector<Tensor2<2>> F(g.num_qp(), Tensor2<2>::Identity());
    for (int c = 0; c < g.num_cells(); ++c)
      for (int q = 0; q < StructuredGrid<2>::kCellQP; ++q)
        if (g.qp_coord(c, q)(0) > 0.5) F[c * StructuredGrid<2>::kCellQP + q].diagonal() << 2.0, 0.5;
    return F;
  };
  // the quotient is normalized by the H^1 norm on the same unit domain, so no further rescaling applies
  StructuredGrid<2> g8({8, 8}, {1.0, 1.0}), g16({16, 16}, {1.0, 1.0}), g24({24, 24}, {1.0, 1.0});
  const double i8 = korn_constant(g8, identity(g8));
  const double i16 = korn_constant(g16, identity(g16));
  const double i24 = korn_constant(g24, identity(g24));
  const double d8 = korn_constant(g8, disc(g8));
  const double d16 = korn_constant(g16, disc(g16));
  const bool positive = i16 > 0.0 && i24 > 0.0;
  const bool stable = std::abs(i16 - i24) <= 1e-8;

  double run_min = kInf;
  int evaluated = 0;
  for (const auto& r : shear_rows)
    if (!std::isnan(r.korn_const)) {
      run_min = std::min(run_min, r.korn_const);
      ++evaluated;
    }
  const bool run_bound = evaluated > 0 && run_min > 0.0;
  const double smooth_drop = std::abs(i8 - i16) / i8, disc_drop = (d8 - d16) / d8;
  const bool degrades = d16 < d8 && disc_drop > 5.0 * smooth_drop;

  Outcome o{9, "korn", positive && stable && run_bound && degrades, ""};
  o.detail = std::string(positive ? "" : "NOT ") + "positive at F = I; " + (stable ? "" : "NOT ") +
             "stable: 16x16 " + fmt(i16, 8) + " vs 24x24 " + fmt(i24, 8) + " differ by " + fmt(std::abs(i16 - i24)) +
             " (limit 1e-8); run-level lower bound " + fmt(run_min) + " over " + std::to_string(evaluated) +
             " states; discontinuous F 8x8 " + fmt(d8, 6) + " -> 16x16 " + fmt(d16, 6) + " (drop " + fmt(disc_drop) + " vs smooth " +
             fmt(smooth_drop) + ")";
  return o;
}

// ---- 10 ----

Outcome refinement(MatrixAudit& audit) {
  Outcome o{10, "refinement_trends", true, ""};
  auto hook = [&](const Trajectory<2>& tr) {
    progress("  cell tau " + fmt(tr.tau) + " eps " + fmt(tr.eps));
    audit.add(tr);
  };
  for (const char* name : {"refine_tau", "refine_eps"}) {
    progress(std::string("10: ") + name);
    const auto p = preset(name);
    RunOptions opt;
    const auto rep = refinement_study<2>(scenario(name), p.tau_list, p.eps_list, opt, hook);
    const auto certs = refinement_certificates(rep);
    const std::set<std::string> want = std::string(name) == "refine_tau"
                                           ? std::set<std::string>{"tau_cauchy_decreasing"}
                                           : std::set<std::string>{"eps_rate_vanishing", "xi_gap_decreasing"};
    std::set<std::string> seen;
    for (const auto& c : certs) {
      if (!want.count(c.name)) continue;
      seen.insert(c.name);
      o.passed = o.passed && c.passed;
      o.detail += (o.detail.empty() ? "" : "; ") + c.name + (c.passed ? "" : " FAILED") + " [" + c.detail + "]";
    }
    o.passed = o.passed && seen == want;
  }
  return o;
}

// ---- 11 ----

Outcome isothermal(const Trajectory<2>& tr, const std::vector<StepDiagnostics>& rows) {
  double worst = 0.0, worst_ledger = 0.0, min_diss = kInf, defect_excess = 0.0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& m = rows[k].mech;
    worst = std::max(worst, std::abs(m.net) / m.scale);
    defect_excess = std::max(defect_excess, (m.convex_defect - m.slack) / m.scale);
    worst_ledger = std::max(worst_ledger, std::abs(rows[k].ledger.net) / rows[k].ledger.scale);
    min_diss = std::min(min_diss, rows[k].ledger.dissipation);
  }
  const bool ok = tr.isothermal() && tr.eps == 0.0 && min_diss > 0.0 && worst <= 1e-8 && worst_ledger <= 1e-8 &&
                  defect_excess <= 1e-8;
  Outcome o{11, "isothermal_identity", ok, ""};
  o.detail = "isothermal_creep, eps = " + fmt(tr.eps) + ", " + std::to_string(rows.size() - 1) +
             " steps: worst mechanical identity residual / scale " + fmt(worst) + ", ledger " + fmt(worst_ledger) +
             ", min step dissipation " + fmt(min_diss);
  return o;
}

// ---- 12 ----

Outcome weak_residual_audit(const std::vector<const Trajectory<2>*>& runs) {
  progress("12: weak residuals");
  const auto bank = make_test_bank(runs.front()->grid(), runs.front()->scenario->T, 10, 1);
  std::vector<WeakResiduals> r;
  for (const auto* tr : runs) r.push_back(weak_residuals(*tr, bank));
  bool ok = bank.size() == 10;
  std::string mech, heat;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i > 0) ok = ok && r[i].mech < r[i - 1].mech && r[i].heat < r[i - 1].heat;
    mech += (i ? " " : "") + fmt(r[i].mech);
    heat += (i ? " " : "") + fmt(r[i].heat);
  }
  Outcome o{12, "weak_residuals", ok, ""};
  o.detail = "shear_pulse, 10 test pairs, tau";
  for (const auto* tr : runs) o.detail += " " + fmt(tr->tau);
  o.detail += ": momentum " + mech + "; heat " + heat;
  return o;
}

std::set<int> parse_ids(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line per criterion."};
  std::string expect_fail, only;
  app.add_option("--expect-fail", expect_fail, "Comma-separated criteria known to fail; exit 0 iff exactly these fail");
  app.add_option("--only", only, "Comma-separated criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> expected = parse_ids(expect_fail);
  std::set<int> selected = parse_ids(only);
  if (selected.empty())
    for (int i = 1; i <= 12; ++i) selected.insert(i);
  auto want = [&](std::initializer_list<int> ids) {
    for (int i : ids)
      if (selected.count(i)) return true;
    return false;
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Outcome> out;
  MatrixAudit audit;
  try {
    if (want({1})) out.push_back(gradient_consistency());
    if (want({2})) out.push_back(frame_indifference());
    if (want({3, 4, 5})) out.push_back(equilibrium(audit));

    std::vector<const std::vector<StepDiagnostics>*> diagnosed;
    Trajectory<2> shear, shear_h, shear_2h, shear_4h, ins, iso;
    std::vector<StepDiagnostics> shear_rows, ins_rows, iso_rows;
    if (want({4, 5, 6, 7, 8, 9, 12})) {
      const auto p = preset("shear_pulse");
      shear = simulate("shear_pulse", p.tau, p.eps);
      shear_rows = diagnose(shear);
      audit.add(shear, &shear_rows);
      diagnosed.push_back(&shear_rows);
    }
    if (want({4, 5, 6, 8})) {
      const auto p = preset("insulated_pulse");
      ins = simulate("insulated_pulse", p.tau, p.eps);
      DiagnosticsOptions dopt;
      dopt.korn_every = 0;
      ins_rows = diagnose(ins, dopt);
      audit.add(ins, &ins_rows);
      diagnosed.push_back(&ins_rows);
    }
    if (want({4, 5, 6, 11})) {
      const auto p = preset("isothermal_creep");
      iso = simulate("isothermal_creep", p.tau, 0.0);
      DiagnosticsOptions dopt;
      dopt.korn_every = 0;
      iso_rows = diagnose(iso, dopt);
      audit.add(iso, &iso_rows);
      diagnosed.push_back(&iso_rows);
    }
    if (want({6})) out.push_back(enthalpy_laws(diagnosed));
    if (want({7})) out.push_back(energy_ledger(shear_rows));
    if (want({8})) out.push_back(entropy(shear_rows, ins, ins_rows));
    if (want({9})) out.push_back(korn(shear_rows));
    if (want({4, 5, 10})) out.push_back(refinement(audit));
    if (want({11})) out.push_back(isothermal(iso, iso_rows));
    if (want({4, 5, 12})) {
      const auto p = preset("shear_pulse");
      shear_4h = simulate("shear_pulse", 4 * p.tau, p.eps);
      shear_2h = simulate("shear_pulse", 2 * p.tau, p.eps);
      shear_h = simulate("shear_pulse", p.tau / 2, p.eps);
      for (const auto* tr : {&shear_4h, &shear_2h, &shear_h}) audit.add(*tr);
      out.push_back(weak_residual_audit({&shear_4h, &shear_2h, &shear, &shear_h}));
    }

    Outcome d{4, "per_step_descent", audit.substeps > 0 && audit.descent_violations == 0, ""};
    d.detail = std::to_string(audit.descent_violations) + " increases over " + std::to_string(audit.substeps) +
               " accepted mechanical steps in " + std::to_string(audit.trajectories) + " runs" +
               (audit.descent_violations ? " (worst " + fmt(audit.worst_increase) + ")" : "");
    out.push_back(d);
    Outcome p{5, "positivity_invertibility",
              audit.substeps > 0 && audit.min_theta >= -1e-10 && audit.min_accepted_det > 0.0 &&
                  audit.hk_violations == 0,
              ""};
    p.detail = "min theta " + fmt(audit.min_theta) + ", min det over accepted iterates " +
               fmt(audit.min_accepted_det) + ", certificate above measured min det at " +
               std::to_string(audit.hk_violations) + " of " + std::to_string(audit.hk_checked) + " states";
    out.push_back(p);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 3;
  }

  std::sort(out.begin(), out.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::set<int> failed;
  for (const auto& o : out) {
    if (!selected.count(o.id)) continue;
    if (!o.passed) failed.insert(o.id);
    std::cout << (o.passed ? "PASS " : "FAIL ") << o.id << " " << o.name << ": " << o.detail
              << (!o.passed && expected.count(o.id) ? " [expected failure]" : "") << std::endl;
  }
  std::set<int> expected_selected;
  for (int i : expected)
    if (selected.count(i)) expected_selected.insert(i);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << selected.size() - failed.size() << " of " << selected.size() << " criteria passed in " << fmt(secs)
            << " s" << std::endl;
  if (failed != expected_selected) {
    for (int i : failed)
      if (!expected_selected.count(i)) std::cout << "unexpected failure: criterion " << i << std::endl;
    for (int i : expected_selected)
      if (!failed.count(i)) std::cout << "criterion " << i << " passed but is listed as an expected failure" << std::endl;
    return 1;
  }
  return 0;
}
