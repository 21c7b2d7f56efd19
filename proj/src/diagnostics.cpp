#include "kvt/diagnostics.hpp"

#include "kvt/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace kvt {

namespace {

template <int Dim>
double integral(const StructuredGrid<Dim>& g, const std::vector<double>& d) {
  return g.assemble_scalar(d);
}

/// r_i = sum_q w_q (src_q N_i + flux_q . grad N_i) for scalar test functions.
template <int Dim>
NodalField scalar_residual(const StructuredGrid<Dim>& g, const std::vector<double>& src,
                           const std::vector<Vec<Dim>>& flux) {
  using G = StructuredGrid<Dim>;
  NodalField r = NodalField::Zero(g.ndofs(1));
  for (int c = 0; c < g.num_cells(); ++c) {
    const auto cb = g.cell_basis(c);
    for (int ql = 0; ql < G::kCellQP; ++ql) {
      const int q = c * G::kCellQP + ql;
      const double w = g.qp_weight(ql);
      for (int b = 0; b < G::kCellBasis; ++b) {
        double v = 0.0;
        if (!src.empty()) v += src[q] * g.N()(ql, b);
        if (!flux.empty()) v += flux[q].dot(g.dN(ql).col(b));
        r(cb[b]) += w * v;
      }
    }
  }
  return r;
}

template <int Dim>
double face_integral(const StructuredGrid<Dim>& g, const std::vector<double>& d) {
  double s = 0.0;
  const auto& bfs = g.boundary_faces();
  for (std::size_t f = 0; f < bfs.size(); ++f)
    for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q)
      s += g.face_qp_weight(bfs[f].face, q) * d[f * StructuredGrid<Dim>::kFaceQP + q];
  return s;
}

/// Sum of the value coefficients: the residual tested with v = 1.
template <int Dim>
double test_with_one(const NodalField& r) {
  constexpr int nd = StructuredGrid<Dim>::kNodeDofs;
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); i += nd) s += r(i);
  return s;
}

/// Per-substep mechanical quantities shared by the two energy checks.
struct MechSeg {
  double M0 = 0, M1 = 0, lhs = 0, convex = 0, slack = 0, lambda = 0, solver = 0, ext = 0, rate2 = 0, eps2 = 0;
};

template <int Dim>
MechSeg mech_segment(const Trajectory<Dim>& traj, const Segment& seg) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  const NodalField& y0 = seg.prev->y;
  const NodalField& y1 = seg.next->y;
  const NodalField dy = y1 - y0;
  MechIncrement<Dim> inc;
  inc.grid = &g;
  inc.material = &m;
  inc.y_prev = y0;
  inc.theta_prev = seg.prev->theta;
  inc.tau = seg.rec->tau;
  inc.eps = traj.eps;
  inc.load = seg.rec->load;
  inc.coupled = !traj.isothermal();
  const MechProblem<Dim> P(inc);
  const auto parts = P.parts(y1);
  MechSeg s;
  s.M0 = mechanical_energy(g, m, y0);
  s.M1 = mechanical_energy(g, m, y1);
  s.rate2 = 2.0 * parts.rate;
  s.eps2 = 2.0 * parts.eps_term;
  s.ext = seg.rec->load.dot(dy);
  double cpl = 0.0;
  if (inc.coupled) {
    const auto k1 = g.eval_kinematics(y1);
    const auto kd = g.eval_kinematics(dy);
    const auto th = g.eval_scalar(seg.prev->theta);
    std::vector<double> d(g.num_qp());
    for (int q = 0; q < g.num_qp(); ++q)
      d[q] = ddot(m.coupling_stress<Dim>(k1.F[q], std::max(th.value[q], 0.0)), kd.F[q]);
    cpl = integral(g, d);
  }
  s.lhs = s.M1 - s.M0 + s.rate2 + s.eps2 + cpl - s.ext;
  s.convex = s.M1 - s.M0 - mechanical_energy_derivative(g, m, y1, dy);
  const double n2 = grad_norm2(g, dy);
  s.lambda = n2 > 0.0 ? estimate_lambda(g, m, y1, y0) : 0.0;
  s.slack = s.lambda * n2;
  s.solver = P.gradient(y1).dot(dy);
  return s;
}

template <int Dim>
double enthalpy_integral(const StructuredGrid<Dim>& g, const State& s) {
  return g.assemble_scalar(s.w);
}

/// Smooth 1D factor sin(a x + b) and its derivative.
struct Wave {
  double a, b;
  [[nodiscard]] double v(double x) const { return std::sin(a * x + b); }
  [[nodiscard]] double d(double x) const { return a * std::cos(a * x + b); }
};

template <int Dim>
NodalField product_field(const StructuredGrid<Dim>& g, int ncomp, int comp, const std::array<Wave, Dim>& w) {
  return g.interpolate(ncomp, [&](const Vec<Dim>& x, int c, int mask) -> double {
    if (c != comp) return 0.0;
    double p = 1.0;
    for (int k = 0; k < Dim; ++k) p *= ((mask >> k) & 1) ? w[k].d(x(k)) : w[k].v(x(k));
    return p;
  });
}

template <int Dim>
NodalField instantaneous_load(const Scenario<Dim>& sc, double t) {
  const auto& g = *sc.grid;
  if (!sc.bulk && !sc.traction) return NodalField::Zero(g.ndofs(Dim));
  std::vector<Vec<Dim>> bulk, trac;
  if (sc.bulk) {
    bulk.resize(g.num_qp());
    for (int c = 0; c < g.num_cells(); ++c)
      for (int q = 0; q < StructuredGrid<Dim>::kCellQP; ++q)
        bulk[c * StructuredGrid<Dim>::kCellQP + q] = sc.bulk(t, g.qp_coord(c, q));
  }
  if (sc.traction) {
    trac.resize(g.num_face_qp());
    const auto& bfs = g.boundary_faces();
    for (std::size_t f = 0; f < bfs.size(); ++f)
      for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q)
        trac[f * StructuredGrid<Dim>::kFaceQP + q] = sc.traction(t, g.face_qp_coord(bfs[f], q), bfs[f].face);
  }
  return g.assemble_load(bulk, trac);
}

}  // namespace

// ---------------------------------------------------------------------------------------------------------------
// Healey-Kroemer determinant bound

template <int Dim>
HKCertificate healey_kroemer_certificate(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                         double C_M, const HKOptions& opt) {
  const auto& mp = mat.params();
  HKCertificate c;
  c.lambda = opt.lambda > 0.0 ? opt.lambda : 1.0 - Dim / mp.p;
  if (!(c.lambda > 0.0) || !(c.lambda * mp.q > Dim)) {
    std::ostringstream os;
    os << "determinant certificate needs lambda q > d (lambda = " << c.lambda << ", q = " << mp.q << ", d = " << Dim
       << "); this is the parameter condition q > pd/(p-d)";
    throw ConfigError(os.str());
  }
  const auto kin = grid.eval_kinematics(y);
  c.measured_min_det = kin.min_det();
  c.energy = mechanical_energy(grid, mat, y);
  if (!(c.energy <= C_M)) {
    std::ostringstream os;
    os << "determinant certificate: M(y) = " << c.energy << " exceeds C_M = " << C_M;
    throw ContractViolation(os.str());
  }
  const int nq = grid.num_qp();
  std::vector<double> a(nq), b(nq), e(nq);
  for (int q = 0; q < nq; ++q) {
    a[q] = std::pow(kin.F[q].norm(), mp.s);
    b[q] = std::pow(1.0 / kin.detF[q], mp.q);
    e[q] = std::pow(kin.G[q].norm(), mp.p);
  }
  c.C1 = std::pow(grid.assemble_scalar(a), 1.0 / mp.s) + std::pow(grid.assemble_scalar(b), 1.0 / mp.q) +
         std::pow(grid.assemble_scalar(e), 1.0 / mp.p);
  // difference quotients of det over quadrature points at most neighbor_cells cells apart
  constexpr int QP = StructuredGrid<Dim>::kCellQP;
  std::vector<Vec<Dim>> x(nq);
  for (int cell = 0; cell < grid.num_cells(); ++cell)
    for (int q = 0; q < QP; ++q) x[cell * QP + q] = grid.qp_coord(cell, q);
  const auto& cells = grid.cells();
  const int r = opt.neighbor_cells;
  double C2 = 0.0;
  for (int cell = 0; cell < grid.num_cells(); ++cell) {
    const auto ci = grid.cell_index(cell);
    std::array<int, Dim> lo, hi;
    for (int k = 0; k < Dim; ++k) {
      lo[k] = std::max(0, ci[k] - r);
      hi[k] = std::min(cells[k] - 1, ci[k] + r);
    }
    std::array<int, Dim> cj = lo;
    while (true) {
      int other = 0;
      for (int k = Dim - 1; k >= 0; --k) other = other * cells[k] + cj[k];
      if (other >= cell) {
        for (int p = 0; p < QP; ++p)
          for (int q = 0; q < QP; ++q) {
            const int i = cell * QP + p, j = other * QP + q;
            if (i == j) continue;
            const double dist = (x[i] - x[j]).norm();
            C2 = std::max(C2, std::abs(kin.detF[i] - kin.detF[j]) / std::pow(dist, c.lambda));
          }
      }
      int k = 0;
      while (k < Dim && ++cj[k] > hi[k]) cj[k] = lo[k], ++k;
      if (k == Dim) break;
    }
  }
  c.C2 = C2;
  double minside = grid.lengths()[0];
  for (int k = 1; k < Dim; ++k) minside = std::min(minside, grid.lengths()[k]);
  c.r_star = 0.5 * minside;
  // an orthant of the unit sphere
  const double sphere = (Dim == 2) ? 2.0 * M_PI : 4.0 * M_PI;
  c.alpha_star = sphere / std::pow(2.0, Dim);
  double cprime = std::pow(c.r_star, Dim) / Dim;
  if (C2 > 0.0) cprime = std::min(cprime, 1.0 / (Dim * std::pow(C2, Dim / c.lambda)));
  c.c3 = c.alpha_star / std::pow(2.0, mp.q) * cprime;
  const double b1 = std::pow(c.c3, 1.0 / mp.q) / c.C1;
  const double b2 = std::pow(c.c3 / std::pow(c.C1, mp.q), c.lambda / (c.lambda * mp.q - Dim));
  c.bound = std::min(b1, b2);
  return c;
}

// ---------------------------------------------------------------------------------------------------------------
// Korn constant

template <int Dim>
double korn_constant(const StructuredGrid<Dim>& grid, const std::vector<Tensor2<Dim>>& F, const KornOptions& opt) {
  using G = StructuredGrid<Dim>;
  if (static_cast<int>(F.size()) != grid.num_qp()) throw ContractViolation("korn_constant: one F per quadrature point");
  for (const auto& f : F)
    if (!(f.determinant() > 0.0)) throw ContractViolation("korn_constant: det F must be positive");
  const auto& mask = grid.dirichlet_mask();
  std::vector<int> idx(mask.size(), -1);
  int n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) idx[i] = n++;
  std::vector<Eigen::Triplet<double>> ta, tb;
  std::array<int, G::kVecLocal> dofs;
  Eigen::MatrixXd Bloc = Eigen::MatrixXd::Zero(G::kVecLocal, G::kVecLocal);
  for (int q = 0; q < G::kCellQP; ++q)
    Bloc += grid.qp_weight(q) * (Eigen::MatrixXd(grid.B_Y(q)).transpose() * grid.B_Y(q) +
                                 Eigen::MatrixXd(grid.B_F(q)).transpose() * grid.B_F(q));
  Eigen::MatrixXd Aloc(G::kVecLocal, G::kVecLocal);
  for (int c = 0; c < grid.num_cells(); ++c) {
    Aloc.setZero();
    for (int q = 0; q < G::kCellQP; ++q) {
      const Eigen::MatrixXd LB = cauchy_green_rate_map<Dim>(F[c * G::kCellQP + q]) * grid.B_F(q);
      Aloc.noalias() += grid.qp_weight(q) * LB.transpose() * LB;
    }
    grid.cell_dofs(c, Dim, dofs.data());
    for (int i = 0; i < G::kVecLocal; ++i) {
      const int a = idx[dofs[i]];
      if (a < 0) continue;
      for (int j = 0; j < G::kVecLocal; ++j) {
        const int b = idx[dofs[j]];
        if (b < 0) continue;
        ta.emplace_back(a, b, Aloc(i, j));
        tb.emplace_back(a, b, Bloc(i, j));
      }
    }
  }
  Eigen::SparseMatrix<double> A(n, n), B(n, n);
  A.setFromTriplets(ta.begin(), ta.end());
  B.setFromTriplets(tb.begin(), tb.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success || (solver.vectorD().array() <= 0.0).any())
    throw ContractViolation("korn_constant: the strain form is singular on the admissible space");
  const int bs = std::min(opt.block, n);
  std::mt19937_64 rng(20240607);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Eigen::MatrixXd X(n, bs);
  for (int j = 0; j < bs; ++j)
    for (int i = 0; i < n; ++i) X(i, j) = U(rng);
  double mu = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iter; ++it) {
    const Eigen::MatrixXd BX = B * X;
    Eigen::MatrixXd Y(n, bs);
    for (int j = 0; j < bs; ++j) Y.col(j) = solver.solve(BX.col(j));
    const Eigen::MatrixXd AY = A * Y;
    const Eigen::MatrixXd BY = B * Y;
    Eigen::MatrixXd Ar = Y.transpose() * AY;
    Eigen::MatrixXd Br = Y.transpose() * BY;
    Ar = 0.5 * (Ar + Ar.transpose()).eval();
    Br = 0.5 * (Br + Br.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Ar, Br);
    X = Y * es.eigenvectors();
    const double m = es.eigenvalues()(0);
    const bool conv = std::abs(m - mu) <= opt.tol * std::abs(m);
    mu = m;
    if (conv) break;
  }
  return mu;
}

// ---------------------------------------------------------------------------------------------------------------
// Energy checks

template <int Dim>
MechEnergyCheck mechanical_energy_check(const Trajectory<Dim>& traj, int k, double tol) {
  MechEnergyCheck c;
  double M1 = 0.0;
  for (const auto& seg : step_segments(traj, k)) {
    const auto s = mech_segment(traj, seg);
    c.lhs += s.lhs;
    c.convex_defect += s.convex;
    c.slack += s.slack;
    c.lambda = std::max(c.lambda, s.lambda);
    c.solver += s.solver;
    c.scale = std::max({c.scale, std::abs(s.ext), s.rate2});
    M1 = s.M1;
  }
  c.scale = std::max(c.scale, std::abs(M1));
  c.net = c.lhs - c.convex_defect;
  c.ok = std::abs(c.net) <= tol * c.scale && c.convex_defect <= c.slack + tol * c.scale;
  return c;
}

template <int Dim>
EnergyLedger total_energy_check(const Trajectory<Dim>& traj, int k, double tol) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  const double kappa = m.params().kappa;
  EnergyLedger L;
  double E1 = 0.0;
  for (const auto& seg : step_segments(traj, k)) {
    const auto s = mech_segment(traj, seg);
    const double tau = seg.rec->tau;
    L.ext_power += s.ext;
    L.eps_dissipation += s.eps2;
    L.convex_defect += s.convex;
    L.solver_mech += s.solver;
    L.scale = std::max({L.scale, std::abs(s.ext), s.rate2});
    if (traj.isothermal()) {
      L.dE += s.M1 - s.M0;
      L.dissipation += s.rate2;
      E1 = s.M1;
      continue;
    }
    HeatIncrement<Dim> hi;
    hi.grid = &g;
    hi.material = &m;
    hi.y_prev = seg.prev->y;
    hi.y_new = seg.next->y;
    hi.theta_prev = seg.prev->theta;
    hi.w_prev = seg.prev->w;
    hi.tau = tau;
    hi.eps = traj.eps;
    hi.theta_b = seg.rec->theta_b;
    const HeatProblem<Dim> HP(hi);
    const auto th1 = g.eval_scalar(seg.next->theta);
    const auto th0 = g.eval_scalar(seg.prev->theta);
    const auto& F1 = HP.F_new();
    const auto& dF = HP.rate();
    const int nq = g.num_qp();
    std::vector<double> gap(nq), cm(nq), cl(nq), xi(nq);
    for (int q = 0; q < nq; ++q) {
      gap[q] = HP.dissipation()[q] - HP.heat_source()[q];
      xi[q] = HP.dissipation()[q];
      cm[q] = ddot(Tensor2<Dim>(m.coupling_stress_ext<Dim>(F1[q], th1.value[q]) -
                                m.coupling_stress<Dim>(F1[q], std::max(th0.value[q], 0.0))),
                   dF[q]) *
              tau;
      cl[q] = seg.next->w[q] - m.enthalpy_ext<Dim>(F1[q], th1.value[q]);
    }
    L.xi_gap += tau * integral(g, gap);
    L.dissipation += tau * integral(g, xi);
    L.coupling_mismatch += integral(g, cm);
    L.clamp_defect += integral(g, cl);
    const auto tf = g.eval_scalar_face(seg.next->theta);
    std::vector<double> bd(tf.size());
    for (std::size_t i = 0; i < tf.size(); ++i) bd[i] = kappa * (tf[i] - seg.rec->theta_b[i]);
    L.boundary_heat += tau * face_integral(g, bd);
    L.solver_heat += tau * test_with_one<Dim>(HP.gradient(seg.next->theta));
    const double W0 = enthalpy_integral(g, *seg.prev), W1 = enthalpy_integral(g, *seg.next);
    L.dE += (s.M1 + W1) - (s.M0 + W0);
    E1 = s.M1 + W1;
  }
  L.scale = std::max({L.scale, std::abs(E1), L.dissipation});
  if (traj.isothermal()) {
    L.net = L.dE - (L.ext_power - L.dissipation - L.eps_dissipation + L.convex_defect);
  } else {
    L.net = L.dE - (L.ext_power - L.boundary_heat - L.xi_gap - L.eps_dissipation + L.coupling_mismatch +
                    L.convex_defect + L.clamp_defect);
  }
  L.ok = std::abs(L.net) <= tol * L.scale && L.xi_gap >= 0.0;
  return L;
}

// ---------------------------------------------------------------------------------------------------------------
// Entropy

template <int Dim>
EntropyProduction entropy_production(const Trajectory<Dim>& traj, int k) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  EntropyProduction ep;
  for (const auto& seg : step_segments(traj, k)) {
    const double tau = seg.rec->tau;
    const auto kp = g.eval_kinematics(seg.prev->y);
    const auto kn = g.eval_kinematics(seg.next->y);
    const auto th0 = g.eval_scalar(seg.prev->theta);
    const auto th1 = g.eval_scalar(seg.next->theta);
    std::vector<double> d(g.num_qp(), 0.0);
    for (int q = 0; q < g.num_qp(); ++q) {
      const double t = th1.value[q];
      if (t <= kThetaFloor) {
        ++ep.excluded;
        continue;
      }
      const double tp = std::max(th0.value[q], 0.0);
      const Tensor2<Dim> dF = (kn.F[q] - kp.F[q]) / tau;
      const double xi = m.regularized_rate<Dim>(kp.F[q], dF, tp, traj.eps);
      const Tensor2<Dim> K = m.pullback_conductivity<Dim>(kp.F[q], tp);
      d[q] = xi / t + th1.grad[q].dot(K * th1.grad[q]) / (t * t);
    }
    ep.value += tau * g.assemble_scalar(d);
  }
  return ep;
}

template <int Dim>
double total_entropy(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const State& s) {
  const auto kin = grid.eval_kinematics(s.y);
  const auto th = grid.eval_scalar(s.theta);
  std::vector<double> d(grid.num_qp());
  for (int q = 0; q < grid.num_qp(); ++q) {
    const double t = std::max(th.value[q], kThetaFloor);
    d[q] = mat.da(t) * mat.phi1<Dim>(kin.F[q]) + mat.params().c * std::log(t);
  }
  return grid.assemble_scalar(d);
}

// ---------------------------------------------------------------------------------------------------------------
// A-priori monitor

template <int Dim>
std::vector<AprioriRow> apriori_monitor(const Trajectory<Dim>& traj) {
  const auto& g = traj.grid();
  const double p = traj.material().params().p;
  const auto H1 = g.scalar_h1();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> h1solver(H1);
  const auto M = g.scalar_mass();
  std::vector<AprioriRow> rows;
  for (int k = 0; k <= traj.num_steps(); ++k) {
    const auto& s = traj.snapshots[k];
    AprioriRow r;
    r.step = k;
    const auto kin = g.eval_kinematics(s.y);
    std::vector<double> d(g.num_qp());
    for (int q = 0; q < g.num_qp(); ++q)
      d[q] = std::pow(kin.y[q].norm(), p) + std::pow(kin.F[q].norm(), p) +
             std::pow(kin.G[q].norm(), p);
    r.y_W2p = std::pow(g.assemble_scalar(d), 1.0 / p);
    r.min_det = kin.min_det();
    r.theta_L2 = std::sqrt(s.theta.dot(M * s.theta));
    r.theta_H1 = std::sqrt(s.theta.dot(H1 * s.theta));
    if (k > 0) {
      const auto& sp = traj.snapshots[k - 1];
      r.rate_L2 = std::sqrt(grad_norm2(g, NodalField(s.y - sp.y))) / traj.tau;
      std::vector<double> dw(s.w.size());
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = (s.w[i] - sp.w[i]) / traj.tau;
      const NodalField b = scalar_residual<Dim>(g, dw, {});
      r.wdot_dual = std::sqrt(std::max(0.0, b.dot(h1solver.solve(b))));
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------------------------------------------
// Weak residuals

template <int Dim>
std::vector<TestPair<Dim>> make_test_bank(const StructuredGrid<Dim>& grid, double T, int n, std::uint64_t seed) {
  std::vector<TestPair<Dim>> bank;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, M_PI);
  const std::vector<std::function<double(double)>> etas = {
      [](double) { return 1.0; },
      [T](double t) { return t / T; },
      [T](double t) { return std::sin(M_PI * t / T); },
      [T](double t) { return std::cos(M_PI * t / T); },
      [T](double t) { return (t / T) * (t / T); },
  };
  struct Rho {
    std::function<double(double)> f, df;
  };
  const std::vector<Rho> rhos = {
      {[T](double t) { return 1.0 - t / T; }, [T](double) { return -1.0 / T; }},
      {[T](double t) { return (1.0 - t / T) * (1.0 - t / T); }, [T](double t) { return -2.0 * (1.0 - t / T) / T; }},
      {[T](double t) { return std::cos(0.5 * M_PI * t / T); },
       [T](double t) { return -0.5 * M_PI / T * std::sin(0.5 * M_PI * t / T); }},
      {[T](double t) { return std::sin(M_PI * t / T); }, [T](double t) { return M_PI / T * std::cos(M_PI * t / T); }},
      {[T](double t) { return 1.0 - (t / T) * (t / T); }, [T](double t) { return -2.0 * t / (T * T); }},
  };
  for (int i = 0; i < n; ++i) {
    std::array<Wave, Dim> wz, wt;
    for (int k = 0; k < Dim; ++k) {
      const double L = grid.lengths()[k];
      wz[k] = Wave{M_PI * (1 + (i + k) % 3) / L, phase(rng)};
      wt[k] = Wave{M_PI * (1 + (i + 2 * k) % 2) / L, phase(rng)};
    }
    TestPair<Dim> tp;
    tp.zeta = product_field<Dim>(grid, Dim, i % Dim, wz);
    grid.eliminate_dirichlet(tp.zeta);
    tp.vartheta = product_field<Dim>(grid, 1, 0, wt);
    tp.eta = etas[i % etas.size()];
    tp.rho = rhos[i % rhos.size()].f;
    tp.drho = rhos[i % rhos.size()].df;
    bank.push_back(std::move(tp));
  }
  return bank;
}

template <int Dim>
WeakResiduals weak_residuals(const Trajectory<Dim>& traj, const std::vector<TestPair<Dim>>& bank) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  const auto& sc = *traj.scenario;
  const double kappa = m.params().kappa;
  const int nb = static_cast<int>(bank.size());
  WeakResiduals out;
  out.mech_each.assign(nb, 0.0);
  out.heat_each.assign(nb, 0.0);
  const double gx[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  const double tau = traj.tau;
  const bool heat = !traj.isothermal();
  const int nq = g.num_qp();
  auto k0 = g.eval_kinematics(traj.snapshots[0].y);
  for (int k = 1; k <= traj.num_steps(); ++k) {
    const auto& s0 = traj.snapshots[k - 1];
    const auto& s1 = traj.snapshots[k];
    const auto k1 = g.eval_kinematics(s1.y);
    const NodalField dth = s1.theta - s0.theta;
    for (double s : gx) {
      const double t = (k - 1 + s) * tau;
      const double wt = 0.5 * tau;
      std::vector<Tensor2<Dim>> stress(nq);
      std::vector<Tensor3<Dim>> hyper(nq);
      const NodalField theta = s0.theta + s * dth;
      const auto th = g.eval_scalar(theta);
      std::vector<double> src(nq), wv(nq);
      std::vector<Vec<Dim>> flux(nq);
      for (int q = 0; q < nq; ++q) {
        const Tensor2<Dim> F = (1 - s) * k0.F[q] + s * k1.F[q];
        const Tensor2<Dim> Fd = (k1.F[q] - k0.F[q]) / tau;
        const Tensor3<Dim> Gq = (1 - s) * k0.G[q] + s * k1.G[q];
        const double tp = std::max(th.value[q], 0.0);
        stress[q] = m.viscous_stress<Dim>(F, Fd, tp) + traj.eps * Fd + m.elastic_stress<Dim>(F);
        if (heat) stress[q] += m.coupling_stress<Dim>(F, tp);
        hyper[q] = m.hyperstress<Dim>(Gq);
        if (heat) {
          src[q] = m.regularized_rate<Dim>(F, Fd, tp, traj.eps) + ddot(m.coupling_stress<Dim>(F, tp), Fd);
          flux[q] = m.pullback_conductivity<Dim>(F, tp) * th.grad[q];
          wv[q] = (1 - s) * s0.w[q] + s * s1.w[q];
        }
      }
      const NodalField rm = g.assemble_gradient(stress, hyper, {}, {}) - instantaneous_load(sc, t);
      NodalField rh, mh;
      if (heat) {
        std::vector<double> neg(nq);
        for (int q = 0; q < nq; ++q) neg[q] = -src[q];
        rh = scalar_residual<Dim>(g, neg, flux);
        std::vector<double> tb(g.num_face_qp());
        const auto& bfs = g.boundary_faces();
        for (std::size_t f = 0; f < bfs.size(); ++f)
          for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q)
            tb[f * StructuredGrid<Dim>::kFaceQP + q] =
                MaterialModel::regularize(sc.theta_b(t, g.face_qp_coord(bfs[f], q)), traj.eps);
        rh += g.boundary_assemble(theta, tb, kappa).residual;
        mh = scalar_residual<Dim>(g, wv, {});
      }
      for (int i = 0; i < nb; ++i) {
        out.mech_each[i] += wt * bank[i].eta(t) * rm.dot(bank[i].zeta);
        if (heat)
          out.heat_each[i] +=
              wt * (bank[i].rho(t) * rh.dot(bank[i].vartheta) - bank[i].drho(t) * mh.dot(bank[i].vartheta));
      }
    }
    k0 = k1;
  }
  if (heat) {
    const NodalField m0 = scalar_residual<Dim>(g, traj.snapshots[0].w, {});
    for (int i = 0; i < nb; ++i) out.heat_each[i] -= bank[i].rho(0.0) * m0.dot(bank[i].vartheta);
  }
  for (int i = 0; i < nb; ++i) {
    out.mech += out.mech_each[i] * out.mech_each[i];
    out.heat += out.heat_each[i] * out.heat_each[i];
  }
  out.mech = std::sqrt(out.mech);
  out.heat = std::sqrt(out.heat);
  return out;
}

// ---------------------------------------------------------------------------------------------------------------
// Per-step table and certificates

template <int Dim>
std::vector<StepDiagnostics> diagnose(const Trajectory<Dim>& traj, const DiagnosticsOptions& opt) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  const int N = traj.num_steps();
  double C_M = opt.C_M;
  std::vector<double> Ms(N + 1);
  for (int k = 0; k <= N; ++k) Ms[k] = mechanical_energy(g, m, traj.snapshots[k].y);
  if (!(C_M > 0.0)) C_M = *std::max_element(Ms.begin(), Ms.end());
  std::vector<StepDiagnostics> rows;
  for (int k = 0; k <= N; ++k) {
    const auto& s = traj.snapshots[k];
    StepDiagnostics d;
    d.step = k;
    d.t = s.t;
    const auto kin = g.eval_kinematics(s.y);
    const auto th = g.eval_scalar(s.theta);
    d.M = Ms[k];
    d.H = hyperstress_energy_total(g, m, s.y);
    std::vector<double> phi(g.num_qp());
    for (int q = 0; q < g.num_qp(); ++q) {
      const double tp = std::max(th.value[q], 0.0);
      phi[q] = m.coupling_energy<Dim>(kin.F[q], tp);
      d.enthalpy_mismatch = std::max(d.enthalpy_mismatch, std::abs(s.w[q] - m.enthalpy<Dim>(kin.F[q], tp)));
    }
    d.Phi_cpl = g.assemble_scalar(phi);
    d.W = g.assemble_scalar(s.w);
    d.E = d.M + d.W;
    d.entropy_total = total_entropy(g, m, s);
    d.min_detF = kin.min_det();
    d.min_theta = min_scalar(g, s.theta);
    d.hk_bound = healey_kroemer_certificate(g, m, s.y, C_M, opt.hk).bound;
    const bool korn_now = opt.korn_every > 0 && (k % opt.korn_every == 0 || k == N);
    if (korn_now) d.korn_const = korn_constant(g, kin.F, opt.korn);
    if (k > 0) {
      d.min_accepted_det = std::numeric_limits<double>::infinity();
      d.descent = std::numeric_limits<double>::infinity();
      for (const auto& seg : step_segments(traj, k)) {
        const auto& r = *seg.rec;
        d.mech_residual = std::max(d.mech_residual, r.mech_residual);
        d.heat_residual = std::max(d.heat_residual, r.heat_residual);
        d.min_accepted_det = std::min(d.min_accepted_det, r.min_accepted_det);
        d.descent = std::min(d.descent, r.functional_prev - r.functional_value);
        d.min_theta = std::min(d.min_theta, r.min_theta);
      }
      d.mech = mechanical_energy_check(traj, k, opt.energy_tol);
      d.ledger = total_energy_check(traj, k, opt.energy_tol);
      d.xi_step = d.ledger.dissipation;
      d.xi_reg_step = d.ledger.dissipation - d.ledger.xi_gap;
      d.ext_power = d.ledger.ext_power;
      d.boundary_heat = d.ledger.boundary_heat;
      d.energy_gap_total = d.ledger.net;
      if (!traj.isothermal()) {
        const auto ep = entropy_production(traj, k);
        d.entropy_prod = ep.value;
        d.entropy_excluded = ep.excluded;
      }
    } else {
      d.min_accepted_det = d.min_detF;
    }
    rows.push_back(d);
  }
  return rows;
}

template <int Dim>
std::vector<Certificate> certify(const Trajectory<Dim>& traj, const std::vector<StepDiagnostics>& rows,
                                 const DiagnosticsOptions& opt) {
  std::vector<Certificate> out;
  auto add = [&](const std::string& name, bool ok, const std::string& detail) { out.push_back({name, ok, detail}); };
  auto fmt = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6g", v);
    return std::string(b);
  };
  int bad_descent = 0, bad_det = 0, bad_hk = 0, bad_pos = 0, bad_w = 0, bad_mech = 0, bad_ledger = 0, bad_gap = 0,
      bad_ent = 0, bad_korn = 0;
  double worst_ratio = 0.0, worst_mech = 0.0, worst_ledger = 0.0, min_korn = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (r.min_detF <= 0.0 || r.min_accepted_det <= 0.0) ++bad_det;
    if (r.hk_bound > r.min_detF) ++bad_hk;
    worst_ratio = std::max(worst_ratio, r.hk_bound / r.min_detF);
    if (r.min_theta < -opt.tol_pos) ++bad_pos;
    if (r.enthalpy_mismatch > 1e-12) ++bad_w;
    if (!std::isnan(r.korn_const)) {
      min_korn = std::min(min_korn, r.korn_const);
      if (!(r.korn_const > 0.0)) ++bad_korn;
    }
    if (r.step == 0) continue;
    if (r.descent < 0.0) ++bad_descent;
    if (!r.mech.ok) ++bad_mech;
    worst_mech = std::max(worst_mech, std::abs(r.mech.net) / std::max(r.mech.scale, 1e-300));
    if (std::abs(r.ledger.net) > opt.energy_tol * r.ledger.scale) ++bad_ledger;
    worst_ledger = std::max(worst_ledger, std::abs(r.ledger.net) / std::max(r.ledger.scale, 1e-300));
    if (r.ledger.xi_gap < 0.0) ++bad_gap;
    if (r.entropy_prod < 0.0) ++bad_ent;
  }
  const int N = traj.num_steps();
  add("mech_descent", bad_descent == 0, std::to_string(bad_descent) + " of " + std::to_string(N) + " steps increased the incremental functional");
  add("determinant", bad_det == 0, std::to_string(bad_det) + " states or iterates with det <= 0");
  add("hk_certificate", bad_hk == 0, "max certificate / measured min det = " + fmt(worst_ratio) + " (estimated Hoelder constant)");
  add("temperature_positivity", bad_pos == 0, std::to_string(bad_pos) + " states below -tol_pos");
  add("enthalpy_consistency", bad_w == 0, std::to_string(bad_w) + " states with |w - enthalpy| > 1e-12");
  add("mechanical_energy", bad_mech == 0, "worst relative net residual " + fmt(worst_mech));
  add("total_energy_ledger", bad_ledger == 0 && bad_gap == 0,
      "worst relative net " + fmt(worst_ledger) + ", negative dissipation-gap items: " + std::to_string(bad_gap));
  add("entropy_production", bad_ent == 0, std::to_string(bad_ent) + " steps with negative production");
  if (std::isfinite(min_korn)) add("korn", bad_korn == 0, "smallest estimate " + fmt(min_korn));
  return out;
}

std::vector<Certificate> refinement_certificates(const RefinementReport& rep, double eps_fraction) {
  std::vector<Certificate> out;
  auto fmt = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return std::string(b);
  };
  // tau sequences, grouped by eps in report order; a single tau has no trend to check
  if (!rep.tau_cauchy.empty()) {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < rep.tau_cauchy.size(); ++i) {
      const auto& e = rep.tau_cauchy[i];
      detail += (detail.empty() ? "" : "; ") + std::string("eps ") + fmt(e.other) + " tau " + fmt(e.fine) + ": " +
                fmt(e.dF) + "/" + fmt(e.dtheta);
      if (i > 0 && rep.tau_cauchy[i - 1].other == e.other)
        ok = ok && e.dF < rep.tau_cauchy[i - 1].dF && e.dtheta < rep.tau_cauchy[i - 1].dtheta;
    }
    out.push_back({"tau_cauchy_decreasing", ok, detail});
  }
  {
    // cells are stored eps-major: cells[e * ntau + t]
    std::vector<double> taus;
    for (const auto& c : rep.cells)
      if (std::find(taus.begin(), taus.end(), c.tau) == taus.end()) taus.push_back(c.tau);
    bool rate_ok = true, gap_ok = true, frac_ok = true, enough = false;
    std::string rd, gd;
    for (double tau : taus) {
      std::vector<const RefinementCell*> col;
      for (const auto& c : rep.cells)
        if (c.tau == tau) col.push_back(&c);
      if (col.size() < 2) continue;
      enough = true;
      for (std::size_t i = 1; i < col.size(); ++i) {
        rate_ok = rate_ok && col[i]->eps_rate < col[i - 1]->eps_rate;
        gap_ok = gap_ok && col[i]->xi_gap < col[i - 1]->xi_gap;
      }
      const auto* last = col.back();
      const double frac = last->eps_rate / last->dissipation;
      frac_ok = frac_ok && frac <= eps_fraction;
      rd += (rd.empty() ? "" : "; ") + std::string("tau ") + fmt(tau) + ": eps-rate/dissipation at eps " +
            fmt(last->eps) + " = " + fmt(frac);
      gd += (gd.empty() ? "" : "; ") + std::string("tau ") + fmt(tau) + ":";
      for (const auto* c : col) gd += " " + fmt(c->xi_gap);
    }
    if (enough) {
      out.push_back({"eps_rate_vanishing", rate_ok && frac_ok, rd});
      out.push_back({"xi_gap_decreasing", gap_ok, gd});
    }
  }
  return out;
}

#define KVT_INSTANTIATE(D)                                                                                          \
  template HKCertificate healey_kroemer_certificate<D>(const StructuredGrid<D>&, const MaterialModel&,              \
                                                       const NodalField&, double, const HKOptions&);                \
  template double korn_constant<D>(const StructuredGrid<D>&, const std::vector<Tensor2<D>>&, const KornOptions&);   \
  template MechEnergyCheck mechanical_energy_check<D>(const Trajectory<D>&, int, double);                           \
  template EnergyLedger total_energy_check<D>(const Trajectory<D>&, int, double);                                   \
  template EntropyProduction entropy_production<D>(const Trajectory<D>&, int);                                      \
  template double total_entropy<D>(const StructuredGrid<D>&, const MaterialModel&, const State&);                   \
  template std::vector<AprioriRow> apriori_monitor<D>(const Trajectory<D>&);                                        \
  template std::vector<TestPair<D>> make_test_bank<D>(const StructuredGrid<D>&, double, int, std::uint64_t);        \
  template WeakResiduals weak_residuals<D>(const Trajectory<D>&, const std::vector<TestPair<D>>&);                  \
  template std::vector<StepDiagnostics> diagnose<D>(const Trajectory<D>&, const DiagnosticsOptions&);               \
  template std::vector<Certificate> certify<D>(const Trajectory<D>&, const std::vector<StepDiagnostics>&,           \
                                               const DiagnosticsOptions&);

KVT_INSTANTIATE(2)
KVT_INSTANTIATE(3)

#undef KVT_INSTANTIATE

}  // namespace kvt
