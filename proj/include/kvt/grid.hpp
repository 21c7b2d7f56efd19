#pragma once

#include "kvt/tensor.hpp"

#include <Eigen/Sparse>

#include <array>
#include <functional>
#include <vector>

namespace kvt {

/// Coefficient vector of a field in the Hermite space; length = num_nodes * 2^Dim * ncomp.
using NodalField = Eigen::VectorXd;

/// A face of the box: axis in [0, Dim), side 0 (x_axis = 0) or 1 (x_axis = L_axis).
struct Face {
  int axis = 0;
  int side = 0;
  bool operator==(const Face&) const = default;
};

/// Per-quadrature-point kinematics of a deformation.
template <int Dim>
struct Kinematics {
  std::vector<Vec<Dim>> y;
  std::vector<Tensor2<Dim>> F;
  std::vector<Tensor3<Dim>> G;
  std::vector<double> detF;
  [[nodiscard]] double min_det() const;
};

/// Per-quadrature-point values and gradients of a scalar field.
template <int Dim>
struct ScalarAtQP {
  std::vector<double> value;
  std::vector<Vec<Dim>> grad;
};

/// Uniform tensor-product grid on [0, L_0] x ... x [0, L_{Dim-1}] carrying a C^1 cubic Hermite space
/// (Bogner-Fox-Schmit). Every node holds 2^Dim coefficients per component: the value and all mixed
/// derivatives d^|e| / dx^e with e a bitmask over the axes. Coefficient (node, e, comp) is stored at
/// (node * 2^Dim + e) * ncomp + comp.
///
/// Cell integrals use the 4-point Gauss rule per axis (exact for degree 7 in each variable), boundary
/// faces use the same rule on the face.
template <int Dim>
class StructuredGrid {
 public:
  static constexpr int kNodeDofs = 1 << Dim;
  static constexpr int kCellBasis = 1 << (2 * Dim);
  static constexpr int kGauss1D = 4;
  static constexpr int kCellQP = (Dim == 2) ? 16 : 64;
  static constexpr int kFaceQP = (Dim == 2) ? 4 : 16;
  static constexpr int kVecLocal = kCellBasis * Dim;

  using BF = Eigen::Matrix<double, Dim * Dim, kVecLocal>;
  using BG = Eigen::Matrix<double, Dim * Dim * Dim, kVecLocal>;
  using BY = Eigen::Matrix<double, Dim, kVecLocal>;

  StructuredGrid(std::array<int, Dim> cells, std::array<double, Dim> lengths,
                 std::vector<Face> dirichlet = {Face{0, 0}});

  [[nodiscard]] const std::array<int, Dim>& cells() const { return cells_; }
  [[nodiscard]] const std::array<double, Dim>& lengths() const { return lengths_; }
  [[nodiscard]] const std::array<double, Dim>& spacing() const { return h_; }
  [[nodiscard]] const std::vector<Face>& dirichlet_faces() const { return dirichlet_; }
  [[nodiscard]] bool is_dirichlet(const Face& f) const;

  [[nodiscard]] int num_nodes() const { return num_nodes_; }
  [[nodiscard]] int num_cells() const { return num_cells_; }
  [[nodiscard]] int num_qp() const { return num_cells_ * kCellQP; }
  [[nodiscard]] int ndofs(int ncomp) const { return num_nodes_ * kNodeDofs * ncomp; }
  [[nodiscard]] double measure() const;
  [[nodiscard]] double boundary_measure() const;

  [[nodiscard]] Vec<Dim> node_coord(int node) const;
  [[nodiscard]] std::array<int, Dim> cell_index(int cell) const;
  [[nodiscard]] Vec<Dim> qp_coord(int cell, int q) const;
  /// Physical quadrature weight (identical for every cell).
  [[nodiscard]] double qp_weight(int q) const { return wq_[q]; }

  /// Global scalar basis indices (node * 2^Dim + e) of the 4^Dim basis functions on a cell.
  [[nodiscard]] std::array<int, kCellBasis> cell_basis(int cell) const;
  /// Global coefficient indices of a cell for a field with ncomp components; local index = b * ncomp + comp.
  void cell_dofs(int cell, int ncomp, int* out) const;

  // Reference data (physical derivatives; identical for all cells on a uniform grid).
  [[nodiscard]] const Eigen::Matrix<double, kCellQP, kCellBasis>& N() const { return N_; }
  [[nodiscard]] const Eigen::Matrix<double, Dim, kCellBasis>& dN(int q) const { return dN_[q]; }
  [[nodiscard]] const Eigen::Matrix<double, Dim * Dim, kCellBasis>& d2N(int q) const { return d2N_[q]; }
  [[nodiscard]] const BF& B_F(int q) const { return BF_[q]; }
  [[nodiscard]] const BG& B_G(int q) const { return BG_[q]; }
  [[nodiscard]] const BY& B_Y(int q) const { return BY_[q]; }

  // Boundary faces: every cell face lying on the box boundary, in a fixed order.
  struct BoundaryFace {
    Face face;
    int cell;
  };
  [[nodiscard]] const std::vector<BoundaryFace>& boundary_faces() const { return bfaces_; }
  [[nodiscard]] const Eigen::Matrix<double, kFaceQP, kCellBasis>& face_N(const Face& f) const {
    return faceN_[f.axis][f.side];
  }
  [[nodiscard]] double face_qp_weight(const Face& f, int q) const { return faceW_[f.axis][q]; }
  [[nodiscard]] Vec<Dim> face_qp_coord(const BoundaryFace& bf, int q) const;
  [[nodiscard]] int num_face_qp() const { return static_cast<int>(bfaces_.size()) * kFaceQP; }

  /// Coefficients of the interpolant of a smooth field: fn(x, comp, mask) returns d^mask f_comp (x).
  [[nodiscard]] NodalField interpolate(int ncomp, const std::function<double(const Vec<Dim>&, int, int)>& fn) const;
  [[nodiscard]] NodalField interpolate_affine(const Tensor2<Dim>& A, const Vec<Dim>& b) const;
  [[nodiscard]] NodalField identity() const { return interpolate_affine(Tensor2<Dim>::Identity(), Vec<Dim>::Zero()); }
  [[nodiscard]] NodalField constant_scalar(double v) const;

  /// true for coefficients of a deformation fixed by y = identity on Dirichlet faces.
  [[nodiscard]] const std::vector<char>& dirichlet_mask() const { return dmask_; }
  /// Zeroes entries of a vector field coefficient vector (or residual) at Dirichlet coefficients.
  void eliminate_dirichlet(NodalField& r) const;
  /// Largest deviation of y from the identity over Dirichlet coefficients.
  [[nodiscard]] double dirichlet_defect(const NodalField& y) const;

  [[nodiscard]] Kinematics<Dim> eval_kinematics(const NodalField& y) const;
  [[nodiscard]] ScalarAtQP<Dim> eval_scalar(const NodalField& theta) const;
  /// Scalar values at boundary face quadrature points (face-major order).
  [[nodiscard]] std::vector<double> eval_scalar_face(const NodalField& theta) const;
  [[nodiscard]] std::vector<Vec<Dim>> eval_vector_face(const NodalField& y) const;

  /// Sum of w_q * density_q.
  [[nodiscard]] double assemble_scalar(const std::vector<double>& density) const;
  /// Discrete residual <sigma, grad z> + <h, grad^2 z> - <g, z> - <f, z>_{Gamma_N} for all test coefficients,
  /// Dirichlet rows eliminated. bulk has one entry per quadrature point (may be empty); traction one entry per
  /// boundary face quadrature point (entries on Dirichlet faces are ignored; may be empty).
  [[nodiscard]] NodalField assemble_gradient(const std::vector<Tensor2<Dim>>& stress,
                                             const std::vector<Tensor3<Dim>>& hyperstress,
                                             const std::vector<Vec<Dim>>& bulk,
                                             const std::vector<Vec<Dim>>& traction) const;
  /// Load functional coefficients L with <l, y> = L . y.
  [[nodiscard]] NodalField assemble_load(const std::vector<Vec<Dim>>& bulk, const std::vector<Vec<Dim>>& traction) const;

  struct RobinResult {
    double energy;
    NodalField residual;
  };
  /// Integral of (kappa / 2)(theta - theta_b)^2 over the whole boundary and its gradient.
  [[nodiscard]] RobinResult boundary_assemble(const NodalField& theta, const std::vector<double>& theta_b,
                                              double kappa) const;
  /// Boundary mass matrix (integral of N_i N_j over the whole boundary) for scalar fields.
  [[nodiscard]] Eigen::SparseMatrix<double> boundary_mass() const;
  /// Scalar mass and stiffness matrices (identity conductivity).
  [[nodiscard]] Eigen::SparseMatrix<double> scalar_mass() const;
  [[nodiscard]] Eigen::SparseMatrix<double> scalar_h1() const;

 private:
  std::array<int, Dim> cells_;
  std::array<double, Dim> lengths_;
  std::array<double, Dim> h_;
  std::vector<Face> dirichlet_;
  int num_nodes_ = 0;
  int num_cells_ = 0;

  std::array<Vec<Dim>, kCellQP> xq_ref_;  // reference coordinates in [0,1]^Dim
  std::array<double, kCellQP> wq_;
  Eigen::Matrix<double, kCellQP, kCellBasis> N_;
  std::array<Eigen::Matrix<double, Dim, kCellBasis>, kCellQP> dN_;
  std::array<Eigen::Matrix<double, Dim * Dim, kCellBasis>, kCellQP> d2N_;
  std::array<BF, kCellQP> BF_;
  std::array<BG, kCellQP> BG_;
  std::array<BY, kCellQP> BY_;

  std::vector<BoundaryFace> bfaces_;
  std::array<std::array<Eigen::Matrix<double, kFaceQP, kCellBasis>, 2>, Dim> faceN_;
  std::array<std::array<Vec<Dim>, kFaceQP>, Dim> faceX_ref_;  // reference coords with t_axis = 0
  std::array<std::array<double, kFaceQP>, Dim> faceW_;

  std::vector<char> dmask_;
  NodalField identity_;

  [[nodiscard]] int node_id(const std::array<int, Dim>& idx) const;
  [[nodiscard]] int cell_first_node(int cell) const;
};

/// 1D cubic Hermite shape function on [0,1]: side s in {0,1}, derivative flag e in {0,1}, h the cell length.
/// Returns value and first two physical derivatives.
struct Hermite1D {
  double v, d1, d2;
};
Hermite1D hermite1d(int side, int deriv, double t, double h);

/// 4-point Gauss rule on [0,1].
const std::array<double, 4>& gauss4_points();
const std::array<double, 4>& gauss4_weights();

}  // namespace kvt
