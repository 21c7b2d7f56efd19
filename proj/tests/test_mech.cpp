#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kvt/errors.hpp"
#include "kvt/mech_step.hpp"
#include "../src/newton.hpp"
#include "support.hpp"

#include <cmath>

using namespace kvt;
using kvt::test::Gen;

namespace {

struct Setup {
  StructuredGrid<2> grid{{4, 4}, {1.0, 1.0}};
  MaterialModel mat;
  MechIncrement<2> inc;
  Setup(double tau = 0.05, double eps = 0.01) {
    inc.grid = &grid;
    inc.material = &mat;
    inc.y_prev = grid.identity();
    inc.theta_prev = grid.constant_scalar(0.5);
    inc.tau = tau;
    inc.eps = eps;
    inc.load = NodalField::Zero(grid.ndofs(2));
  }
};

NodalField perturb(const StructuredGrid<2>& g, const NodalField& y, Gen& gen, double amp) {
  NodalField z = y;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (!g.dirichlet_mask()[i]) z(i) += gen.uniform(-amp, amp);
  return z;
}

NodalField dead_load(const StructuredGrid<2>& g, Vec<2> gbulk) {
  return g.assemble_load(std::vector<Vec<2>>(g.num_qp(), gbulk), {});
}

}  // namespace

TEST_CASE("functional at y_prev is the free energy minus the load work") {
  Setup s;
  Gen gen(31);
  s.inc.y_prev = perturb(s.grid, s.grid.identity(), gen, 0.01);
  s.inc.load = dead_load(s.grid, Vec<2>(0.3, -0.2));
  MechProblem<2> p(s.inc);
  auto parts = p.parts(s.inc.y_prev);
  CHECK(parts.rate == 0.0);
  CHECK(parts.eps_term == 0.0);
  const double psi = mechanical_energy(s.grid, s.mat, s.inc.y_prev) + parts.coupling;
  CHECK(p.value(s.inc.y_prev) == doctest::Approx(psi - s.inc.load.dot(s.inc.y_prev)).epsilon(1e-14));
}

TEST_CASE("identity is a strict local minimizer of the load-free functional") {
  Setup s;
  Gen gen(32);
  const double J0 = incremental_functional(s.inc, s.grid.identity());
  int n = 0;
  while (n < 20) {
    NodalField y = perturb(s.grid, s.grid.identity(), gen, 0.02);
    const double J = incremental_functional(s.inc, y);
    if (!std::isfinite(J)) continue;
    CHECK(J > J0);
    ++n;
  }
}

TEST_CASE("functional gradient matches finite differences") {
  Gen gen(33);
  for (bool coupled : {true, false}) {
    Setup s(0.1, 0.05);
    s.inc.coupled = coupled;
    s.inc.y_prev = perturb(s.grid, s.grid.identity(), gen, 0.02);
    NodalField th(s.grid.ndofs(1));
    for (Eigen::Index i = 0; i < th.size(); ++i) th(i) = gen.uniform(0.2, 1.0);
    s.inc.theta_prev = th;
    s.inc.load = dead_load(s.grid, Vec<2>(0.1, 0.4));
    MechProblem<2> p(s.inc);
    for (int t = 0; t < 50; ++t) {
      NodalField y = perturb(s.grid, s.inc.y_prev, gen, 0.02);
      const NodalField gr = p.gradient(y);
      NodalField d(y.size());
      for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = gen.uniform(-1, 1);
      s.grid.eliminate_dirichlet(d);
      const double fd = (p.value(y + 1e-6 * d) - p.value(y - 1e-6 * d)) / 2e-6;
      CHECK(std::abs(fd - gr.dot(d)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    // Hessian against differences of the gradient
    NodalField y = perturb(s.grid, s.inc.y_prev, gen, 0.02);
    auto H = p.hessian(y);
    const auto& fr = p.free_dofs();
    for (int t = 0; t < 5; ++t) {
      Eigen::VectorXd df(fr.size());
      for (Eigen::Index i = 0; i < df.size(); ++i) df(i) = gen.uniform(-1, 1);
      NodalField d = NodalField::Zero(y.size());
      for (std::size_t i = 0; i < fr.size(); ++i) d(fr[i]) = df(static_cast<Eigen::Index>(i));
      const NodalField gd = (p.gradient(y + 1e-6 * d) - p.gradient(y - 1e-6 * d)) / 2e-6;
      Eigen::VectorXd gdf(fr.size());
      for (std::size_t i = 0; i < fr.size(); ++i) gdf(static_cast<Eigen::Index>(i)) = gd(fr[i]);
      const Eigen::VectorXd Hd = H * df;
      CHECK((Hd - gdf).norm() <= 1e-5 * std::max(1.0, gdf.norm()));
    }
  }
}

TEST_CASE("load-free steady increment keeps the identity") {
  Setup s;
  auto r = solve_mech(s.inc);
  CHECK((r.y_new - s.grid.identity()).norm() <= 1e-10);
  CHECK(r.descent_gap == 0.0);
  CHECK(r.min_detF == doctest::Approx(1.0));
}

TEST_CASE("small dead load: converged, strict descent, positive determinant") {
  Setup s;
  s.inc.load = dead_load(s.grid, Vec<2>(0.5, 0.0));
  NewtonOptions opt;
  auto r = solve_mech(s.inc, opt);
  CHECK(r.residual_norm <= std::max(opt.rel_tol * r.initial_residual, opt.abs_tol));
  CHECK(r.descent_gap > 0.0);
  CHECK(r.min_detF > 0.0);
  CHECK(r.min_accepted_det > 0.0);
  CHECK(s.grid.dirichlet_defect(r.y_new) == 0.0);
  MechProblem<2> p(s.inc);
  CHECK(p.value(r.y_new) <= p.value(s.inc.y_prev));
}

TEST_CASE("adversarial start near a degenerate determinant never returns det <= 0") {
  Setup s(0.02, 0.01);
  // y = x + bump squeezing the x2 direction in the interior
  auto y0 = s.grid.interpolate(2, [](const Vec<2>& x, int c, int m) -> double {
    const double a = 0.2;
    const double sx = std::sin(M_PI * x(0)), cx = std::cos(M_PI * x(0));
    const double sy = std::sin(M_PI * x(1)), cy = std::cos(M_PI * x(1));
    // u_1 = -a sin^2(pi x) sin(pi y) cos(pi y) / pi, chosen so that d u_1 / d y is large and negative at the centre
    const double f = sx * sx, fx = 2 * M_PI * sx * cx;
    const double gy = sy * cy / M_PI, gyy = std::cos(2 * M_PI * x(1));
    if (c == 0) {
      switch (m) {
        case 0: return x(0);
        case 1: return 1.0;
        default: return 0.0;
      }
    }
    switch (m) {
      case 0: return x(1) - 4.5 * a * f * gy;
      case 1: return -4.5 * a * fx * gy;
      case 2: return 1.0 - 4.5 * a * f * gyy;
      default: return -4.5 * a * fx * gyy;
    }
  });
  const double d0 = s.grid.eval_kinematics(y0).min_det();
  MESSAGE("adversarial start min det " << d0);
  REQUIRE(d0 > 0.0);
  REQUIRE(d0 < 0.2);
  s.inc.y_prev = y0;
  try {
    auto r = solve_mech(s.inc);
    CHECK(r.min_detF > 0.0);
    CHECK(r.min_accepted_det > 0.0);
    CHECK(r.descent_gap >= 0.0);
  } catch (const StepRejected&) {
    CHECK(true);
  }
}

TEST_CASE("infeasible y_prev is a contract violation") {
  Setup s;
  Tensor2<2> R = Tensor2<2>::Identity();
  R(0, 0) = -1.0;
  const NodalField bad = s.grid.interpolate_affine(R, Vec<2>::Zero());
  CHECK(std::isinf(incremental_functional(s.inc, bad)));
  s.inc.y_prev = bad;
  CHECK_THROWS_AS(solve_mech(s.inc), ContractViolation);
}

TEST_CASE("Lambda estimator") {
  Setup s;
  Gen gen(34);
  const NodalField y1 = perturb(s.grid, s.grid.identity(), gen, 0.02);
  CHECK(estimate_lambda(s.grid, s.mat, y1, y1) == 0.0);
  // pure hyperstress model: phi removed by c1, c2 -> 0 is not admissible, so use the convex functional H alone
  MaterialParams hp;
  hp.c1 = 1e-300;
  hp.c2 = 1e-300;
  MaterialModel hyper(hp);
  for (int t = 0; t < 20; ++t) {
    const NodalField a = perturb(s.grid, s.grid.identity(), gen, 0.05);
    const NodalField b = perturb(s.grid, s.grid.identity(), gen, 0.05);
    if (!std::isfinite(mechanical_energy(s.grid, hyper, a)) || !std::isfinite(mechanical_energy(s.grid, hyper, b)))
      continue;
    CHECK(estimate_lambda(s.grid, hyper, a, b) == 0.0);
  }
  // default model: Lambda bounded by the sampled negative curvature of d^2 phi along the segment
  for (int t = 0; t < 10; ++t) {
    const NodalField a = perturb(s.grid, s.grid.identity(), gen, 0.05);
    const NodalField b = perturb(s.grid, a, gen, 0.05);
    const double lam = estimate_lambda(s.grid, s.mat, a, b);
    auto ka = s.grid.eval_kinematics(a);
    auto kb = s.grid.eval_kinematics(b);
    double mu = 0.0;  // max over samples of -lambda_min(d^2 phi) restricted to the direction
    for (int q = 0; q < s.grid.num_qp(); ++q) {
      const Tensor2<2> D = kb.F[q] - ka.F[q];
      if (D.squaredNorm() == 0.0) continue;
      for (int k = 0; k <= 64; ++k) {
        const Tensor2<2> F = ka.F[q] + (k / 64.0) * D;
        const auto dv = flatten<2>(D);
        const double curv = dv.dot(s.mat.elastic_hessian<2>(F) * dv) / D.squaredNorm();
        mu = std::max(mu, -curv);
      }
    }
    CHECK(lam <= 0.5 * mu * (1 + 1e-6) + 1e-12);
  }
}

TEST_CASE("Newton stops on a round-off plateau but not before") {
  // J = J0 + |x|^2 / 2 with a gradient carrying deterministic noise of size 1e-12 that no iterate can remove
  const int n = 20;
  detail::NewtonFns f;
  for (int i = 0; i < n; ++i) f.free.push_back(i);
  std::vector<double> noise(n);
  Gen gen(36);
  for (auto& v : noise) v = gen.uniform(-1e-12, 1e-12);
  int calls = 0;
  f.value = [](const Eigen::VectorXd& x) { return 1e3 + 0.5 * x.squaredNorm(); };
  f.hessian = [&](const Eigen::VectorXd&) {
    Eigen::SparseMatrix<double> H(n, n);
    H.setIdentity();
    return H;
  };
  f.gradient = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = x;
    for (int i = 0; i < n; ++i) g(i) += noise[(i + calls) % n];
    ++calls;
    return g;
  };
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0(i) = gen.uniform(-1, 1);
  NewtonOptions o;
  o.rel_tol = 0.0;
  o.abs_tol = 1e-15;
  const auto r = detail::newton_minimize(x0, f, o, "plateau");
  CHECK(r.roundoff_stop);
  CHECK(r.residual_norm < 1e-11);
  CHECK(r.iterations <= 4);
  // without noise the requested tolerance is met first
  f.gradient = [](const Eigen::VectorXd& x) { return x; };
  o.abs_tol = 1e-10;
  const auto c = detail::newton_minimize(x0, f, o, "clean");
  CHECK(!c.roundoff_stop);
  CHECK(c.residual_norm <= 1e-10);
}
