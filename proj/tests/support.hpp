#pragma once

// Shared helpers for the unit tests: seeded generators of admissible samples and
// central-difference oracles.

#include "kvt/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace kvt::test {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  template <int Dim>
  Tensor2<Dim> matrix(double amp) {
    Tensor2<Dim> A;
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) A(i, j) = uniform(-amp, amp);
    return A;
  }

  /// F = I + perturbation with det F > min_det.
  template <int Dim>
  Tensor2<Dim> deformation_gradient(double amp = 0.5, double min_det = 0.2) {
    for (;;) {
      Tensor2<Dim> F = Tensor2<Dim>::Identity() + matrix<Dim>(amp);
      if (F.determinant() > min_det) return F;
    }
  }

  template <int Dim>
  Tensor2<Dim> rotation() {
    if constexpr (Dim == 2) {
      return rotation2(uniform(-M_PI, M_PI));
    } else {
      Vec<3> ax(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      if (ax.norm() < 1e-3) ax = Vec<3>::UnitZ();
      return rotation3(ax, uniform(-M_PI, M_PI));
    }
  }

  template <int Dim>
  Tensor2<Dim> skew() {
    Tensor2<Dim> A = matrix<Dim>(1.0);
    return A - A.transpose();
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Central difference of a scalar function of one variable.
inline double fd1(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Central-difference gradient of a scalar function of a matrix.
template <int Dim>
Tensor2<Dim> fd_grad(const std::function<double(const Tensor2<Dim>&)>& f, const Tensor2<Dim>& F, double h) {
  Tensor2<Dim> G;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) {
      Tensor2<Dim> Fp = F, Fm = F;
      Fp(i, j) += h;
      Fm(i, j) -= h;
      G(i, j) = (f(Fp) - f(Fm)) / (2 * h);
    }
  return G;
}

/// Central-difference Jacobian of a matrix-valued function of a matrix, on flattened indices.
template <int Dim>
Tensor4<Dim> fd_jac(const std::function<Tensor2<Dim>(const Tensor2<Dim>&)>& f, const Tensor2<Dim>& F, double h) {
  Tensor4<Dim> J;
  for (int b = 0; b < Dim; ++b)
    for (int j = 0; j < Dim; ++j) {
      Tensor2<Dim> Fp = F, Fm = F;
      Fp(b, j) += h;
      Fm(b, j) -= h;
      J.col(b * Dim + j) = flatten<Dim>(Tensor2<Dim>((f(Fp) - f(Fm)) / (2 * h)));
    }
  return J;
}

/// Relative error |a - b| / max(|b|, floor).
template <typename A, typename B>
double rel_err(const A& a, const B& b, double floor = 1.0) {
  if constexpr (std::is_arithmetic_v<A>) {
    return std::abs(a - b) / std::max(std::abs(b), floor);
  } else {
    return (a - b).norm() / std::max(b.norm(), floor);
  }
}

}  // namespace kvt::test
