#include "newton.hpp"

#include "kvt/errors.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <sstream>

namespace kvt::detail {

namespace {

/// Newton direction from H d = -g; shifts the diagonal while the factorization is not positive definite.
/// Returns false when no usable direction was found.
bool newton_direction(const Eigen::SparseMatrix<double>& H, const Eigen::VectorXd& g,
                      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>& solver, bool& analyzed,
                      Eigen::VectorXd& d) {
  if (!analyzed) {
    solver.analyzePattern(H);
    analyzed = true;
  }
  double maxdiag = 0.0;
  for (int i = 0; i < H.outerSize(); ++i) maxdiag = std::max(maxdiag, std::abs(H.coeff(i, i)));
  if (maxdiag == 0.0) maxdiag = 1.0;
  Eigen::SparseMatrix<double> Hs = H;
  double shift = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    if (attempt > 0) {
      shift = (shift == 0.0) ? 1e-10 * maxdiag : shift * 100.0;
      Hs = H;
      for (int i = 0; i < Hs.outerSize(); ++i) Hs.coeffRef(i, i) += shift;
    }
    solver.factorize(Hs);
    if (solver.info() != Eigen::Success) continue;
    if ((solver.vectorD().array() <= 0.0).any()) continue;
    d = solver.solve(-g);
    if (solver.info() != Eigen::Success || !d.allFinite()) continue;
    if (g.dot(d) < 0.0) return true;
  }
  return false;
}

}  // namespace

NewtonReport newton_minimize(Eigen::VectorXd x, const NewtonFns& fns, const NewtonOptions& opt,
                             const std::string& what) {
  const auto& fr = fns.free;
  NewtonReport rep;
  double J = fns.value(x);
  if (!std::isfinite(J)) throw ContractViolation(what + ": functional is not finite at the initial point");
  Eigen::VectorXd g = fns.gradient(x);
  rep.initial_residual = g.norm();
  const double tol = std::max(opt.rel_tol * rep.initial_residual, opt.abs_tol);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool analyzed = false;
  int it = 0;
  double prev_norm = std::numeric_limits<double>::infinity();
  while (g.norm() > tol) {
    if (it >= opt.max_iter) {
      std::ostringstream os;
      os << what << ": no convergence after " << it << " Newton iterations (residual " << g.norm() << ", tolerance "
         << tol << ")";
      throw StepRejected(os.str());
    }
    Eigen::VectorXd d;
    const bool newton = newton_direction(fns.hessian(x), g, solver, analyzed, d);
    if (!newton) d = -g;
    const double slope = g.dot(d);
    // Round-off plateau: the Newton decrement is below the resolution of J and the last iteration no longer
    // reduced the gradient, so no representable iterate improves on x.
    if (newton && -slope <= std::numeric_limits<double>::epsilon() * std::abs(J) && g.norm() > 0.5 * prev_norm) {
      rep.roundoff_stop = true;
      break;
    }
    prev_norm = g.norm();
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd xt = x;
    double Jt = J;
    for (int bt = 0; bt <= opt.max_backtracks; ++bt, alpha *= 0.5) {
      xt = x;
      for (std::size_t i = 0; i < fr.size(); ++i) xt(fr[i]) += alpha * d(static_cast<Eigen::Index>(i));
      Jt = fns.value(xt);
      if (!std::isfinite(Jt)) continue;
      if (fns.gate && !fns.gate(xt, x)) continue;
      // the small relative slack absorbs rounding once the decrease is at machine level
      if (Jt <= J + opt.armijo * alpha * slope + 1e-15 * std::abs(J)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream os;
      os << what << ": line search failed after " << opt.max_backtracks << " backtracks (residual " << g.norm()
         << ")";
      throw StepRejected(os.str());
    }
    x = std::move(xt);
    J = Jt;
    if (fns.on_accept) fns.on_accept(x);
    g = fns.gradient(x);
    ++it;
  }
  rep.x = std::move(x);
  rep.value = J;
  rep.iterations = it;
  rep.residual_norm = g.norm();
  return rep;
}

}  // namespace kvt::detail
