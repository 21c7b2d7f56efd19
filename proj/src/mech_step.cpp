#include "kvt/mech_step.hpp"

#include "kvt/errors.hpp"
#include "newton.hpp"

#include <cmath>
#include <limits>

namespace kvt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <int Dim>
void check_increment(const MechIncrement<Dim>& inc) {
  if (!inc.grid || !inc.material) throw ContractViolation("MechIncrement: grid and material are required");
  if (!(inc.tau > 0)) throw ContractViolation("MechIncrement: tau must be positive");
  if (!(inc.eps >= 0)) throw ContractViolation("MechIncrement: eps must be nonnegative");
  const auto& g = *inc.grid;
  if (inc.y_prev.size() != g.ndofs(Dim)) throw ContractViolation("MechIncrement: y_prev has the wrong size");
  if (inc.load.size() != 0 && inc.load.size() != g.ndofs(Dim))
    throw ContractViolation("MechIncrement: load has the wrong size");
  if (inc.coupled && inc.theta_prev.size() != g.ndofs(1))
    throw ContractViolation("MechIncrement: theta_prev has the wrong size");
}

}  // namespace

template <int Dim>
MechProblem<Dim>::MechProblem(const MechIncrement<Dim>& inc) : inc_(inc) {
  check_increment(inc_);
  const auto& g = *inc_.grid;
  if (inc_.load.size() == 0) inc_.load = NodalField::Zero(g.ndofs(Dim));
  const auto kin = g.eval_kinematics(inc_.y_prev);
  if (!(kin.min_det() > 0.0)) throw ContractViolation("MechIncrement: det grad y_prev must be positive");
  Fp_ = kin.F;
  LtL_.resize(g.num_qp());
  for (int q = 0; q < g.num_qp(); ++q) {
    const Tensor4<Dim> L = cauchy_green_rate_map<Dim>(Fp_[q]);
    LtL_[q] = L.transpose() * L;
  }
  thp_.assign(g.num_qp(), 0.0);
  if (inc_.coupled) {
    const auto th = g.eval_scalar(inc_.theta_prev);
    for (int q = 0; q < g.num_qp(); ++q) thp_[q] = std::max(th.value[q], 0.0);
  }
  const auto& mask = g.dirichlet_mask();
  free_index_.assign(mask.size(), -1);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) {
      free_index_[i] = static_cast<int>(free_.size());
      free_.push_back(static_cast<int>(i));
    }
}

template <int Dim>
MechFunctionalParts MechProblem<Dim>::parts(const NodalField& y) const {
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto kin = g.eval_kinematics(y);
  MechFunctionalParts p;
  if (!(kin.min_det() > 0.0)) {
    p.elastic = kInf;
    return p;
  }
  const double nu = m.params().nu;
  for (int c = 0; c < g.num_cells(); ++c)
    for (int q = 0; q < StructuredGrid<Dim>::kCellQP; ++q) {
      const int i = c * StructuredGrid<Dim>::kCellQP + q;
      const double w = g.qp_weight(q);
      const auto dF = flatten<Dim>(Tensor2<Dim>(kin.F[i] - Fp_[i]));
      p.rate += w * 0.5 * nu / inc_.tau * dF.dot(LtL_[i] * dF);
      p.eps_term += w * 0.5 * inc_.eps / inc_.tau * dF.squaredNorm();
      p.elastic += w * m.elastic_energy<Dim>(kin.F[i]);
      p.hyper += w * m.hyperstress_energy<Dim>(kin.G[i]);
      if (inc_.coupled) p.coupling += w * m.coupling_energy<Dim>(kin.F[i], thp_[i]);
    }
  p.load = inc_.load.dot(y);
  return p;
}

template <int Dim>
double MechProblem<Dim>::value(const NodalField& y) const {
  return parts(y).total();
}

template <int Dim>
NodalField MechProblem<Dim>::gradient(const NodalField& y) const {
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto kin = g.eval_kinematics(y);
  if (!(kin.min_det() > 0.0)) throw NonphysicalState("mechanical gradient at an infeasible deformation");
  const double nu = m.params().nu;
  std::vector<Tensor2<Dim>> s(g.num_qp());
  std::vector<Tensor3<Dim>> h(g.num_qp());
  for (int i = 0; i < g.num_qp(); ++i) {
    const auto dF = flatten<Dim>(Tensor2<Dim>(kin.F[i] - Fp_[i]));
    const Eigen::Matrix<double, Dim * Dim, 1> rate = (nu / inc_.tau) * (LtL_[i] * dF) + (inc_.eps / inc_.tau) * dF;
    s[i] = m.elastic_stress<Dim>(kin.F[i]) + unflatten<Dim>(rate);
    if (inc_.coupled) s[i] += m.coupling_stress<Dim>(kin.F[i], thp_[i]);
    h[i] = m.hyperstress<Dim>(kin.G[i]);
  }
  NodalField r = g.assemble_gradient(s, h, {}, {});
  r -= inc_.load;
  g.eliminate_dirichlet(r);
  return r;
}

template <int Dim>
Eigen::SparseMatrix<double> MechProblem<Dim>::hessian(const NodalField& y) const {
  using G = StructuredGrid<Dim>;
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto kin = g.eval_kinematics(y);
  const double nu = m.params().nu;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(g.num_cells()) * G::kVecLocal * G::kVecLocal);
  std::array<int, G::kVecLocal> dofs;
  Eigen::MatrixXd K(G::kVecLocal, G::kVecLocal);
  for (int c = 0; c < g.num_cells(); ++c) {
    K.setZero();
    for (int q = 0; q < G::kCellQP; ++q) {
      const int i = c * G::kCellQP + q;
      Tensor4<Dim> HF = m.elastic_hessian<Dim>(kin.F[i]) + (nu / inc_.tau) * LtL_[i] +
                        (inc_.eps / inc_.tau) * Tensor4<Dim>::Identity();
      if (inc_.coupled) HF += m.coupling_hessian<Dim>(kin.F[i], thp_[i]);
      const Tensor6<Dim> HG = m.hyperstress_hessian<Dim>(kin.G[i]);
      const auto& BF = g.B_F(q);
      const auto& BG = g.B_G(q);
      K.noalias() += g.qp_weight(q) * (BF.transpose() * HF * BF);
      K.noalias() += g.qp_weight(q) * (BG.transpose() * HG * BG);
    }
    g.cell_dofs(c, Dim, dofs.data());
    for (int a = 0; a < G::kVecLocal; ++a) {
      const int ia = free_index_[dofs[a]];
      if (ia < 0) continue;
      for (int b = 0; b < G::kVecLocal; ++b) {
        const int ib = free_index_[dofs[b]];
        if (ib < 0) continue;
        trip.emplace_back(ia, ib, K(a, b));
      }
    }
  }
  const int n = static_cast<int>(free_.size());
  Eigen::SparseMatrix<double> H(n, n);
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

template <int Dim>
double incremental_functional(const MechIncrement<Dim>& inc, const NodalField& y) {
  return MechProblem<Dim>(inc).value(y);
}

template <int Dim>
MechResult solve_mech(const MechIncrement<Dim>& inc, const NewtonOptions& opt) {
  const MechProblem<Dim> prob(inc);
  const auto& g = *inc.grid;
  MechResult res;
  res.functional_prev = prob.value(inc.y_prev);
  if (!std::isfinite(res.functional_prev))
    throw ContractViolation("solve_mech: the functional is not finite at y_prev");
  double cur_min_det = g.eval_kinematics(inc.y_prev).min_det();
  res.min_accepted_det = cur_min_det;
  detail::NewtonFns fns;
  fns.free = prob.free_dofs();
  fns.value = [&](const Eigen::VectorXd& y) { return prob.value(y); };
  fns.gradient = [&](const Eigen::VectorXd& y) {
    const NodalField r = prob.gradient(y);
    Eigen::VectorXd gf(fns.free.size());
    for (std::size_t i = 0; i < fns.free.size(); ++i) gf(static_cast<Eigen::Index>(i)) = r(fns.free[i]);
    return gf;
  };
  fns.hessian = [&](const Eigen::VectorXd& y) { return prob.hessian(y); };
  double trial_min_det = cur_min_det;
  fns.gate = [&](const Eigen::VectorXd& yt, const Eigen::VectorXd&) {
    trial_min_det = g.eval_kinematics(yt).min_det();
    return trial_min_det > opt.det_floor * cur_min_det;
  };
  fns.on_accept = [&](const Eigen::VectorXd&) {
    cur_min_det = trial_min_det;
    res.min_accepted_det = std::min(res.min_accepted_det, cur_min_det);
  };
  const auto rep = detail::newton_minimize(inc.y_prev, fns, opt, "mechanical step");
  res.y_new = rep.x;
  res.functional_value = rep.value;
  res.iterations = rep.iterations;
  res.residual_norm = rep.residual_norm;
  res.initial_residual = rep.initial_residual;
  res.min_detF = g.eval_kinematics(res.y_new).min_det();
  res.descent_gap = res.functional_prev - res.functional_value;
  if (!(res.min_detF > 0.0)) throw StepRejected("mechanical step: nonpositive determinant at the solution");
  if (res.descent_gap < 0.0)
    throw StepRejected("mechanical step: functional increased relative to y_prev");
  return res;
}

template <int Dim>
double mechanical_energy(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y) {
  const auto kin = grid.eval_kinematics(y);
  if (!(kin.min_det() > 0.0)) return kInf;
  std::vector<double> d(grid.num_qp());
  for (int i = 0; i < grid.num_qp(); ++i)
    d[i] = mat.elastic_energy<Dim>(kin.F[i]) + mat.hyperstress_energy<Dim>(kin.G[i]);
  return grid.assemble_scalar(d);
}

template <int Dim>
double hyperstress_energy_total(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y) {
  const auto kin = grid.eval_kinematics(y);
  std::vector<double> d(grid.num_qp());
  for (int i = 0; i < grid.num_qp(); ++i) d[i] = mat.hyperstress_energy<Dim>(kin.G[i]);
  return grid.assemble_scalar(d);
}

template <int Dim>
double mechanical_energy_derivative(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                    const NodalField& h) {
  const auto kin = grid.eval_kinematics(y);
  if (!(kin.min_det() > 0.0)) throw NonphysicalState("mechanical_energy_derivative: infeasible deformation");
  const auto kh = grid.eval_kinematics(h);
  std::vector<double> d(grid.num_qp());
  for (int i = 0; i < grid.num_qp(); ++i)
    d[i] = ddot(mat.elastic_stress<Dim>(kin.F[i]), kh.F[i]) + mat.hyperstress<Dim>(kin.G[i]).dot(kh.G[i]);
  return grid.assemble_scalar(d);
}

template <int Dim>
double grad_norm2(const StructuredGrid<Dim>& grid, const NodalField& v) {
  const auto k = grid.eval_kinematics(v);
  std::vector<double> d(grid.num_qp());
  for (int i = 0; i < grid.num_qp(); ++i) d[i] = k.F[i].squaredNorm();
  return grid.assemble_scalar(d);
}

template <int Dim>
double estimate_lambda(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y1,
                       const NodalField& y2) {
  const double M1 = mechanical_energy(grid, mat, y1);
  const double M2 = mechanical_energy(grid, mat, y2);
  if (!std::isfinite(M1) || !std::isfinite(M2))
    throw NonphysicalState("estimate_lambda: both deformations must have positive determinant");
  const NodalField h = y2 - y1;
  const double n2 = grad_norm2(grid, h);
  if (!(n2 > 0.0)) return 0.0;
  const double gap = M2 - M1 - mechanical_energy_derivative(grid, mat, y1, h);
  return std::max(0.0, -gap / n2);
}

#define KVT_INSTANTIATE(D)                                                                                         \
  template class MechProblem<D>;                                                                                   \
  template double incremental_functional<D>(const MechIncrement<D>&, const NodalField&);                          \
  template MechResult solve_mech<D>(const MechIncrement<D>&, const NewtonOptions&);                               \
  template double mechanical_energy<D>(const StructuredGrid<D>&, const MaterialModel&, const NodalField&);        \
  template double hyperstress_energy_total<D>(const StructuredGrid<D>&, const MaterialModel&, const NodalField&); \
  template double mechanical_energy_derivative<D>(const StructuredGrid<D>&, const MaterialModel&, const NodalField&, \
                                                  const NodalField&);                                              \
  template double grad_norm2<D>(const StructuredGrid<D>&, const NodalField&);                                     \
  template double estimate_lambda<D>(const StructuredGrid<D>&, const MaterialModel&, const NodalField&,           \
                                     const NodalField&);

KVT_INSTANTIATE(2)
KVT_INSTANTIATE(3)

#undef KVT_INSTANTIATE

}  // namespace kvt
