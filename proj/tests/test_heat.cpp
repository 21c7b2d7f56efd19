#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kvt/errors.hpp"
#include "kvt/heat_step.hpp"
#include "support.hpp"

#include <cmath>

using namespace kvt;
using kvt::test::Gen;

namespace {

struct Setup {
  StructuredGrid<2> grid{{4, 4}, {1.0, 1.0}};
  MaterialModel mat;
  HeatIncrement<2> inc;
  explicit Setup(MaterialParams mp = {}, double theta0 = 0.5) : mat(mp) {
    inc.grid = &grid;
    inc.material = &mat;
    inc.y_prev = grid.identity();
    inc.y_new = grid.identity();
    inc.theta_prev = grid.constant_scalar(theta0);
    inc.w_prev = enthalpy_field(grid, mat, inc.y_prev, inc.theta_prev);
    inc.tau = 0.05;
    inc.eps = 0.01;
    inc.theta_b.assign(grid.num_face_qp(), theta0);
  }
};

NodalField perturb(const StructuredGrid<2>& g, const NodalField& y, Gen& gen, double amp) {
  NodalField z = y;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (!g.dirichlet_mask()[i]) z(i) += gen.uniform(-amp, amp);
  return z;
}

NodalField random_scalar(const StructuredGrid<2>& g, Gen& gen, double lo, double hi) {
  // nodal values in [lo, hi], small derivative coefficients
  NodalField t(g.ndofs(1));
  constexpr int nd = StructuredGrid<2>::kNodeDofs;
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = (i % nd == 0) ? gen.uniform(lo, hi) : gen.uniform(-0.1, 0.1);
  return t;
}

}  // namespace

TEST_CASE("steady data: theta_prev is the minimizer") {
  Setup s;
  auto r = solve_heat(s.inc);
  CHECK((r.theta_new - s.inc.theta_prev).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(r.iterations == 0);
  CHECK(r.min_theta == doctest::Approx(0.5));
  for (std::size_t q = 0; q < r.w_new.size(); ++q) CHECK(r.w_new[q] == doctest::Approx(s.inc.w_prev[q]).epsilon(1e-14));
}

TEST_CASE("thermal functional gradient and Hessian match finite differences") {
  Gen gen(41);
  int count = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Setup s;
    s.inc.y_prev = perturb(s.grid, s.grid.identity(), gen, 0.03);
    s.inc.y_new = perturb(s.grid, s.inc.y_prev, gen, 0.03);
    s.inc.theta_prev = random_scalar(s.grid, gen, 0.1, 1.0);
    s.inc.w_prev = enthalpy_field(s.grid, s.mat, s.inc.y_prev, s.inc.theta_prev);
    for (auto& v : s.inc.theta_b) v = gen.uniform(0.0, 1.0);
    HeatProblem<2> p(s.inc);
    for (int t = 0; t < 25; ++t, ++count) {
      // the last samples of every trial reach below zero to exercise the extension
      const NodalField th = random_scalar(s.grid, gen, t < 20 ? 0.05 : -0.3, 1.0);
      const NodalField gr = p.gradient(th);
      NodalField d(th.size());
      for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = gen.uniform(-1, 1);
      const double h = 1e-6;
      const double fd = (p.value(th + h * d) - p.value(th - h * d)) / (2 * h);
      CHECK(std::abs(fd - gr.dot(d)) <= 1e-5 * std::max(1.0, std::abs(fd)));
      const NodalField gd = (p.gradient(th + h * d) - p.gradient(th - h * d)) / (2 * h);
      const NodalField Hd = p.hessian(th) * d;
      CHECK((Hd - gd).norm() <= 1e-5 * std::max(1.0, gd.norm()));
    }
  }
  CHECK(count >= 100);
}

TEST_CASE("uniform data: minimizer solves the scalar equation") {
  MaterialParams mp;
  Setup s(mp, 0.3);
  const double st = 0.02;
  Tensor2<2> A = Tensor2<2>::Identity();
  A(0, 0) += st;
  s.inc.y_new = s.grid.interpolate_affine(A, Vec<2>::Zero());
  s.inc.eps = 0.1;
  const Tensor2<2> Fn = A;
  const Tensor2<2> dF = (A - Tensor2<2>::Identity()) / s.inc.tau;
  const double w0 = s.mat.enthalpy<2>(Tensor2<2>::Identity(), 0.3);
  const double xi = 4.0 * mp.nu * st * st / (s.inc.tau * s.inc.tau);
  const double h = xi / (1.0 + s.inc.eps * xi);
  auto f = [&](double t) {
    return (s.mat.enthalpy<2>(Fn, t) - w0) / s.inc.tau - h - ddot(s.mat.coupling_stress<2>(Fn, t), dF);
  };
  double lo = 0.0, hi = 10.0;
  REQUIRE(f(lo) < 0.0);
  REQUIRE(f(hi) > 0.0);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  const double root = 0.5 * (lo + hi);
  s.inc.theta_b.assign(s.grid.num_face_qp(), root);
  HeatOptions opt;
  opt.rel_tol = 1e-13;
  auto r = solve_heat(s.inc, opt);
  const auto th = s.grid.eval_scalar(r.theta_new);
  double err = 0.0;
  for (double v : th.value) err = std::max(err, std::abs(v - root));
  MESSAGE("uniform root " << root << " max deviation " << err);
  CHECK(err <= 1e-9);
  CHECK(root > 0.3);
}

TEST_CASE("pure heating: tested enthalpy balance with v = 1") {
  MaterialParams mp;
  mp.bump_amplitude = 0.0;
  Setup s(mp, 0.5);
  const double st = 0.03;
  Tensor2<2> A = Tensor2<2>::Identity();
  A(0, 0) += st;
  s.inc.y_new = s.grid.interpolate_affine(A, Vec<2>::Zero());
  s.inc.theta_b.assign(s.grid.num_face_qp(), 0.2);
  s.inc.eps = 0.05;
  auto r = solve_heat(s.inc);
  const double xi = 4.0 * mp.nu * st * st / (s.inc.tau * s.inc.tau);
  const double h = xi / (1.0 + s.inc.eps * xi);
  std::vector<double> dw(r.w_new.size());
  for (std::size_t q = 0; q < dw.size(); ++q) dw[q] = r.w_new[q] - s.inc.w_prev[q];
  const double lhs = s.grid.assemble_scalar(dw);
  const auto tf = s.grid.eval_scalar_face(r.theta_new);
  double outflow = 0.0;
  for (const auto& bf : s.grid.boundary_faces()) {
    const std::size_t f = static_cast<std::size_t>(&bf - s.grid.boundary_faces().data());
    for (int q = 0; q < StructuredGrid<2>::kFaceQP; ++q) {
      const std::size_t i = f * StructuredGrid<2>::kFaceQP + static_cast<std::size_t>(q);
      outflow += s.grid.face_qp_weight(bf.face, q) * mp.kappa * (tf[i] - s.inc.theta_b[i]);
    }
  }
  const double rhs = s.inc.tau * h * s.grid.measure() - s.inc.tau * outflow;
  MESSAGE("mean enthalpy change " << lhs << " predicted " << rhs);
  CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(rhs)));
  CHECK(r.min_theta > 0.0);
}

TEST_CASE("positivity: cold starts under random motions stay nonnegative") {
  Gen gen(42);
  for (int t = 0; t < 20; ++t) {
    Setup s({}, 0.0);
    s.inc.theta_prev = random_scalar(s.grid, gen, 0.0, 0.05);
    constexpr int nd = StructuredGrid<2>::kNodeDofs;
    for (Eigen::Index i = 0; i < s.inc.theta_prev.size(); ++i)
      if (i % nd != 0) s.inc.theta_prev(i) = 0.0;
    s.inc.y_prev = perturb(s.grid, s.grid.identity(), gen, 0.02);
    s.inc.y_new = perturb(s.grid, s.inc.y_prev, gen, 0.02);
    s.inc.w_prev = enthalpy_field(s.grid, s.mat, s.inc.y_prev, s.inc.theta_prev);
    s.inc.theta_b.assign(s.grid.num_face_qp(), 0.0);
    auto r = solve_heat(s.inc);
    CHECK(r.functional_value <= r.functional_prev);
    CHECK(r.min_theta >= -1e-10);
    CHECK(r.positive);
  }
}

TEST_CASE("w_new is the enthalpy of the new state") {
  Gen gen(43);
  Setup s;
  s.inc.y_new = perturb(s.grid, s.grid.identity(), gen, 0.02);
  auto r = solve_heat(s.inc);
  const auto kin = s.grid.eval_kinematics(s.inc.y_new);
  const auto th = s.grid.eval_scalar(r.theta_new);
  for (int q = 0; q < s.grid.num_qp(); ++q)
    CHECK(std::abs(r.w_new[q] - s.mat.enthalpy<2>(kin.F[q], std::max(th.value[q], 0.0))) <= 1e-12);
}

TEST_CASE("regularization cap") {
  Gen gen(44);
  for (int t = 0; t < 1000; ++t) {
    const double xi = std::exp(gen.uniform(-10, 10));
    const double eps = std::exp(gen.uniform(-8, 2));
    const double r = MaterialModel::regularize(xi, eps);
    CHECK(r <= 1.0 / eps);
    CHECK(r <= xi);
    CHECK(r >= 0.0);
  }
}

TEST_CASE("contracts") {
  Setup s;
  s.inc.w_prev.pop_back();
  CHECK_THROWS_AS(static_cast<void>(solve_heat(s.inc)), ContractViolation);
  Setup s2;
  s2.inc.tau = 0.0;
  CHECK_THROWS_AS(static_cast<void>(heat_functional(s2.inc, s2.inc.theta_prev)), ContractViolation);
}
