#include "kvt/heat_step.hpp"

#include "kvt/errors.hpp"
#include "newton.hpp"

#include <cmath>
#include <numeric>

namespace kvt {

namespace {

template <int Dim>
void check_increment(const HeatIncrement<Dim>& inc) {
  if (!inc.grid || !inc.material) throw ContractViolation("HeatIncrement: grid and material are required");
  if (!(inc.tau > 0)) throw ContractViolation("HeatIncrement: tau must be positive");
  if (!(inc.eps >= 0)) throw ContractViolation("HeatIncrement: eps must be nonnegative");
  const auto& g = *inc.grid;
  if (inc.y_prev.size() != g.ndofs(Dim) || inc.y_new.size() != g.ndofs(Dim))
    throw ContractViolation("HeatIncrement: deformation has the wrong size");
  if (inc.theta_prev.size() != g.ndofs(1)) throw ContractViolation("HeatIncrement: theta_prev has the wrong size");
  if (static_cast<int>(inc.w_prev.size()) != g.num_qp())
    throw ContractViolation("HeatIncrement: w_prev needs one value per quadrature point");
  if (static_cast<int>(inc.theta_b.size()) != g.num_face_qp())
    throw ContractViolation("HeatIncrement: theta_b needs one value per boundary quadrature point");
}

}  // namespace

template <int Dim>
HeatProblem<Dim>::HeatProblem(const HeatIncrement<Dim>& inc) : inc_(inc) {
  check_increment(inc_);
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto kp = g.eval_kinematics(inc_.y_prev);
  const auto kn = g.eval_kinematics(inc_.y_new);
  if (!(kp.min_det() > 0.0) || !(kn.min_det() > 0.0))
    throw ContractViolation("HeatIncrement: det grad y must be positive for y_prev and y_new");
  const auto th = g.eval_scalar(inc_.theta_prev);
  const int nq = g.num_qp();
  Fn_ = kn.F;
  dF_.resize(nq);
  K_.resize(nq);
  xi_.resize(nq);
  xi_reg_.resize(nq);
  for (int q = 0; q < nq; ++q) {
    const double tp = std::max(th.value[q], 0.0);
    dF_[q] = (kn.F[q] - kp.F[q]) / inc_.tau;
    K_[q] = m.pullback_conductivity<Dim>(kp.F[q], tp);
    xi_[q] = m.dissipation_rate<Dim>(kp.F[q], dF_[q], tp);
    xi_reg_[q] = MaterialModel::regularize(xi_[q], inc_.eps);
  }
  robin_ = m.params().kappa * g.boundary_mass();
}

template <int Dim>
double HeatProblem<Dim>::value(const NodalField& theta) const {
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto th = g.eval_scalar(theta);
  std::vector<double> d(g.num_qp());
  for (int q = 0; q < g.num_qp(); ++q) {
    const double t = th.value[q];
    d[q] = (m.W_ext<Dim>(Fn_[q], t) - inc_.w_prev[q] * t) / inc_.tau + 0.5 * th.grad[q].dot(K_[q] * th.grad[q]) -
           xi_reg_[q] * t - ddot(m.coupling_potential_stress_ext<Dim>(Fn_[q], t), dF_[q]);
  }
  return g.assemble_scalar(d) + g.boundary_assemble(theta, inc_.theta_b, m.params().kappa).energy;
}

template <int Dim>
NodalField HeatProblem<Dim>::gradient(const NodalField& theta) const {
  using G = StructuredGrid<Dim>;
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto th = g.eval_scalar(theta);
  NodalField r = g.boundary_assemble(theta, inc_.theta_b, m.params().kappa).residual;
  for (int c = 0; c < g.num_cells(); ++c) {
    const auto cb = g.cell_basis(c);
    for (int ql = 0; ql < G::kCellQP; ++ql) {
      const int q = c * G::kCellQP + ql;
      const double t = th.value[q];
      const double src = (m.enthalpy_ext<Dim>(Fn_[q], t) - inc_.w_prev[q]) / inc_.tau - xi_reg_[q] -
                         ddot(m.coupling_stress_ext<Dim>(Fn_[q], t), dF_[q]);
      const Vec<Dim> flux = K_[q] * th.grad[q];
      const double w = g.qp_weight(ql);
      for (int b = 0; b < G::kCellBasis; ++b)
        r(cb[b]) += w * (src * g.N()(ql, b) + flux.dot(g.dN(ql).col(b)));
    }
  }
  return r;
}

template <int Dim>
Eigen::SparseMatrix<double> HeatProblem<Dim>::hessian(const NodalField& theta) const {
  using G = StructuredGrid<Dim>;
  const auto& g = *inc_.grid;
  const MaterialModel& m = *inc_.material;
  const auto th = g.eval_scalar(theta);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(g.num_cells()) * G::kCellBasis * G::kCellBasis);
  Eigen::Matrix<double, G::kCellBasis, G::kCellBasis> K;
  for (int c = 0; c < g.num_cells(); ++c) {
    K.setZero();
    for (int ql = 0; ql < G::kCellQP; ++ql) {
      const int q = c * G::kCellQP + ql;
      const double t = th.value[q];
      const double a = m.heat_capacity_ext<Dim>(Fn_[q], t) / inc_.tau -
                       ddot(m.coupling_stress_dtheta_ext<Dim>(Fn_[q], t), dF_[q]);
      const double w = g.qp_weight(ql);
      K.noalias() += (w * a) * g.N().row(ql).transpose() * g.N().row(ql);
      K.noalias() += w * g.dN(ql).transpose() * K_[q] * g.dN(ql);
    }
    const auto cb = g.cell_basis(c);
    for (int i = 0; i < G::kCellBasis; ++i)
      for (int j = 0; j < G::kCellBasis; ++j) trip.emplace_back(cb[i], cb[j], K(i, j));
  }
  Eigen::SparseMatrix<double> H(g.ndofs(1), g.ndofs(1));
  H.setFromTriplets(trip.begin(), trip.end());
  return H + robin_;
}

template <int Dim>
double heat_functional(const HeatIncrement<Dim>& inc, const NodalField& theta) {
  return HeatProblem<Dim>(inc).value(theta);
}

template <int Dim>
std::vector<double> enthalpy_field(const StructuredGrid<Dim>& grid, const MaterialModel& mat, const NodalField& y,
                                   const NodalField& theta) {
  const auto kin = grid.eval_kinematics(y);
  const auto th = grid.eval_scalar(theta);
  std::vector<double> w(grid.num_qp());
  for (int q = 0; q < grid.num_qp(); ++q) w[q] = mat.enthalpy<Dim>(kin.F[q], std::max(th.value[q], 0.0));
  return w;
}

template <int Dim>
double min_scalar(const StructuredGrid<Dim>& grid, const NodalField& theta) {
  const auto th = grid.eval_scalar(theta);
  double mn = *std::min_element(th.value.begin(), th.value.end());
  constexpr int nd = StructuredGrid<Dim>::kNodeDofs;
  for (int n = 0; n < grid.num_nodes(); ++n) mn = std::min(mn, theta(n * nd));
  return mn;
}

template <int Dim>
HeatResult<Dim> solve_heat(const HeatIncrement<Dim>& inc, const HeatOptions& opt) {
  const HeatProblem<Dim> prob(inc);
  const auto& g = *inc.grid;
  NewtonOptions nopt;
  nopt.rel_tol = opt.rel_tol;
  nopt.abs_tol = opt.abs_tol;
  nopt.max_iter = opt.max_iter;
  nopt.max_backtracks = opt.max_backtracks;
  detail::NewtonFns fns;
  fns.free.resize(static_cast<std::size_t>(g.ndofs(1)));
  std::iota(fns.free.begin(), fns.free.end(), 0);
  fns.value = [&](const Eigen::VectorXd& t) { return prob.value(t); };
  fns.gradient = [&](const Eigen::VectorXd& t) { return Eigen::VectorXd(prob.gradient(t)); };
  fns.hessian = [&](const Eigen::VectorXd& t) { return prob.hessian(t); };
  HeatResult<Dim> res;
  res.functional_prev = prob.value(inc.theta_prev);
  const auto rep = detail::newton_minimize(inc.theta_prev, fns, nopt, "thermal step");
  res.theta_new = rep.x;
  res.functional_value = rep.value;
  res.iterations = rep.iterations;
  res.residual_norm = rep.residual_norm;
  res.initial_residual = rep.initial_residual;
  res.min_theta = min_scalar(g, res.theta_new);
  res.clamp = std::max(0.0, -res.min_theta);
  res.positive = res.min_theta >= -opt.tol_pos;
  res.w_new = enthalpy_field(g, *inc.material, inc.y_new, res.theta_new);
  return res;
}

#define KVT_INSTANTIATE(D)                                                                                       \
  template class HeatProblem<D>;                                                                                 \
  template double heat_functional<D>(const HeatIncrement<D>&, const NodalField&);                               \
  template HeatResult<D> solve_heat<D>(const HeatIncrement<D>&, const HeatOptions&);                            \
  template std::vector<double> enthalpy_field<D>(const StructuredGrid<D>&, const MaterialModel&, const NodalField&, \
                                                 const NodalField&);                                             \
  template double min_scalar<D>(const StructuredGrid<D>&, const NodalField&);

KVT_INSTANTIATE(2)
KVT_INSTANTIATE(3)

#undef KVT_INSTANTIATE

}  // namespace kvt
