#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace kvt {

template <int Dim>
using Vec = Eigen::Matrix<double, Dim, 1>;

/// Second-order tensor, e.g. the deformation gradient F with F(a, i) = d y_a / d x_i.
template <int Dim>
using Tensor2 = Eigen::Matrix<double, Dim, Dim>;

/// Third-order tensor stored flat; G(a, i, j) = d^2 y_a / (d x_i d x_j) lives at a*Dim*Dim + i*Dim + j.
template <int Dim>
using Tensor3 = Eigen::Matrix<double, Dim * Dim * Dim, 1>;

/// Linear maps on flattened Tensor2 (index a*Dim + i).
template <int Dim>
using Tensor4 = Eigen::Matrix<double, Dim * Dim, Dim * Dim>;

/// Linear maps on flattened Tensor3.
template <int Dim>
using Tensor6 = Eigen::Matrix<double, Dim * Dim * Dim, Dim * Dim * Dim>;

template <int Dim>
constexpr int t3index(int a, int i, int j) {
  return (a * Dim + i) * Dim + j;
}

template <int Dim>
Eigen::Matrix<double, Dim * Dim, 1> flatten(const Tensor2<Dim>& A) {
  Eigen::Matrix<double, Dim * Dim, 1> v;
  for (int a = 0; a < Dim; ++a)
    for (int i = 0; i < Dim; ++i) v(a * Dim + i) = A(a, i);
  return v;
}

template <int Dim>
Tensor2<Dim> unflatten(const Eigen::Matrix<double, Dim * Dim, 1>& v) {
  Tensor2<Dim> A;
  for (int a = 0; a < Dim; ++a)
    for (int i = 0; i < Dim; ++i) A(a, i) = v(a * Dim + i);
  return A;
}

/// Frobenius product A:B.
template <typename A, typename B>
double ddot(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  return x.cwiseProduct(y).sum();
}

/// Cof F = det(F) F^{-T}; well defined for singular F too.
template <int Dim>
Tensor2<Dim> cofactor(const Tensor2<Dim>& F) {
  Tensor2<Dim> C;
  if constexpr (Dim == 2) {
    C << F(1, 1), -F(1, 0), -F(0, 1), F(0, 0);
  } else if constexpr (Dim == 3) {
    C(0, 0) = F(1, 1) * F(2, 2) - F(1, 2) * F(2, 1);
    C(0, 1) = F(1, 2) * F(2, 0) - F(1, 0) * F(2, 2);
    C(0, 2) = F(1, 0) * F(2, 1) - F(1, 1) * F(2, 0);
    C(1, 0) = F(0, 2) * F(2, 1) - F(0, 1) * F(2, 2);
    C(1, 1) = F(0, 0) * F(2, 2) - F(0, 2) * F(2, 0);
    C(1, 2) = F(0, 1) * F(2, 0) - F(0, 0) * F(2, 1);
    C(2, 0) = F(0, 1) * F(1, 2) - F(0, 2) * F(1, 1);
    C(2, 1) = F(0, 2) * F(1, 0) - F(0, 0) * F(1, 2);
    C(2, 2) = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
  } else {
    C = F.determinant() * F.inverse().transpose();
  }
  return C;
}

/// Matrix of the linear map H -> H^T A + A^T H acting on flattened tensors.
/// For A = F this is the map from a velocity gradient to the rate of C = F^T F.
template <int Dim>
Tensor4<Dim> cauchy_green_rate_map(const Tensor2<Dim>& A) {
  Tensor4<Dim> L = Tensor4<Dim>::Zero();
  for (int a = 0; a < Dim; ++a)
    for (int i = 0; i < Dim; ++i)
      for (int b = 0; b < Dim; ++b)
        for (int j = 0; j < Dim; ++j) {
          // (H^T A)_{ai} = sum_k H_{ka} A_{ki};  (A^T H)_{ai} = sum_k A_{ka} H_{ki}
          double v = 0.0;
          if (j == a) v += A(b, i);
          if (j == i) v += A(b, a);
          L(a * Dim + i, b * Dim + j) = v;
        }
  return L;
}

/// Rotation in SO(2) by angle phi.
inline Tensor2<2> rotation2(double phi) {
  Tensor2<2> R;
  R << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return R;
}

/// Rotation in SO(3) about a unit axis by angle phi (Rodrigues).
inline Tensor2<3> rotation3(const Vec<3>& axis, double phi) {
  return Eigen::AngleAxisd(phi, axis.normalized()).toRotationMatrix();
}

}  // namespace kvt
