#include "kvt/grid.hpp"

#include "kvt/errors.hpp"

#include <algorithm>
#include <string>

namespace kvt {

const std::array<double, 4>& gauss4_points() {
  static const std::array<double, 4> x = [] {
    const double a = 0.3399810435848562648026658;
    const double b = 0.8611363115940525752239465;
    return std::array<double, 4>{0.5 * (1 - b), 0.5 * (1 - a), 0.5 * (1 + a), 0.5 * (1 + b)};
  }();
  return x;
}

const std::array<double, 4>& gauss4_weights() {
  static const std::array<double, 4> w = [] {
    const double wa = 0.6521451548625461426269361;
    const double wb = 0.3478548451374538573730639;
    return std::array<double, 4>{0.5 * wb, 0.5 * wa, 0.5 * wa, 0.5 * wb};
  }();
  return w;
}

Hermite1D hermite1d(int side, int deriv, double t, double h) {
  const double t2 = t * t, t3 = t2 * t;
  if (side == 0 && deriv == 0) return {1 - 3 * t2 + 2 * t3, (-6 * t + 6 * t2) / h, (-6 + 12 * t) / (h * h)};
  if (side == 0 && deriv == 1) return {h * (t - 2 * t2 + t3), 1 - 4 * t + 3 * t2, (-4 + 6 * t) / h};
  if (side == 1 && deriv == 0) return {3 * t2 - 2 * t3, (6 * t - 6 * t2) / h, (6 - 12 * t) / (h * h)};
  return {h * (-t2 + t3), -2 * t + 3 * t2, (-2 + 6 * t) / h};
}

template <int Dim>
double Kinematics<Dim>::min_det() const {
  double m = std::numeric_limits<double>::infinity();
  for (double d : detF) m = std::min(m, d);
  return m;
}

namespace {

/// Value, gradient and Hessian of the tensor-product basis (v, e) at reference point t.
template <int Dim>
void tensor_basis(int v, int e, const Vec<Dim>& t, const std::array<double, Dim>& h, double& val,
                  Vec<Dim>& grad, Tensor2<Dim>& hess) {
  std::array<Hermite1D, Dim> f;
  for (int k = 0; k < Dim; ++k) f[k] = hermite1d((v >> k) & 1, (e >> k) & 1, t(k), h[k]);
  val = 1.0;
  for (int k = 0; k < Dim; ++k) val *= f[k].v;
  for (int i = 0; i < Dim; ++i) {
    double g = 1.0;
    for (int k = 0; k < Dim; ++k) g *= (k == i) ? f[k].d1 : f[k].v;
    grad(i) = g;
    for (int j = 0; j < Dim; ++j) {
      double hh = 1.0;
      for (int k = 0; k < Dim; ++k) {
        if (i == j) hh *= (k == i) ? f[k].d2 : f[k].v;
        else hh *= (k == i || k == j) ? f[k].d1 : f[k].v;
      }
      hess(i, j) = hh;
    }
  }
}

}  // namespace

template <int Dim>
StructuredGrid<Dim>::StructuredGrid(std::array<int, Dim> cells, std::array<double, Dim> lengths,
                                    std::vector<Face> dirichlet)
    : cells_(cells), lengths_(lengths), dirichlet_(std::move(dirichlet)) {
  num_nodes_ = 1;
  num_cells_ = 1;
  for (int k = 0; k < Dim; ++k) {
    if (cells_[k] < 2) throw ContractViolation("StructuredGrid: at least 2 cells per axis required");
    if (!(lengths_[k] > 0)) throw ContractViolation("StructuredGrid: side lengths must be positive");
    h_[k] = lengths_[k] / cells_[k];
    num_nodes_ *= cells_[k] + 1;
    num_cells_ *= cells_[k];
  }
  if (dirichlet_.empty()) throw ContractViolation("StructuredGrid: the Dirichlet boundary must be nonempty");
  for (const Face& f : dirichlet_)
    if (f.axis < 0 || f.axis >= Dim || (f.side != 0 && f.side != 1))
      throw ContractViolation("StructuredGrid: invalid Dirichlet face");

  const auto& gx = gauss4_points();
  const auto& gw = gauss4_weights();
  double cellvol = 1.0;
  for (int k = 0; k < Dim; ++k) cellvol *= h_[k];
  for (int q = 0; q < kCellQP; ++q) {
    int r = q;
    double w = cellvol;
    for (int k = 0; k < Dim; ++k) {
      xq_ref_[q](k) = gx[r % 4];
      w *= gw[r % 4];
      r /= 4;
    }
    wq_[q] = w;
    for (int b = 0; b < kCellBasis; ++b) {
      const int v = b / kNodeDofs, e = b % kNodeDofs;
      double val;
      Vec<Dim> g;
      Tensor2<Dim> hs;
      tensor_basis<Dim>(v, e, xq_ref_[q], h_, val, g, hs);
      N_(q, b) = val;
      dN_[q].col(b) = g;
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) d2N_[q](i * Dim + j, b) = hs(i, j);
    }
    BF_[q].setZero();
    BG_[q].setZero();
    BY_[q].setZero();
    for (int b = 0; b < kCellBasis; ++b)
      for (int a = 0; a < Dim; ++a) {
        const int col = b * Dim + a;
        BY_[q](a, col) = N_(q, b);
        for (int i = 0; i < Dim; ++i) {
          BF_[q](a * Dim + i, col) = dN_[q](i, b);
          for (int j = 0; j < Dim; ++j) BG_[q](t3index<Dim>(a, i, j), col) = d2N_[q](i * Dim + j, b);
        }
      }
  }

  // face quadrature
  for (int axis = 0; axis < Dim; ++axis) {
    for (int q = 0; q < kFaceQP; ++q) {
      int r = q;
      double w = 1.0;
      Vec<Dim> t;
      for (int k = 0; k < Dim; ++k) {
        if (k == axis) {
          t(k) = 0.0;
          continue;
        }
        t(k) = gx[r % 4];
        w *= gw[r % 4] * h_[k];
        r /= 4;
      }
      faceX_ref_[axis][q] = t;
      faceW_[axis][q] = w;
      for (int side = 0; side < 2; ++side) {
        Vec<Dim> ts = t;
        ts(axis) = side;
        for (int b = 0; b < kCellBasis; ++b) {
          double val;
          Vec<Dim> g;
          Tensor2<Dim> hs;
          tensor_basis<Dim>(b / kNodeDofs, b % kNodeDofs, ts, h_, val, g, hs);
          faceN_[axis][side](q, b) = val;
        }
      }
    }
  }
  for (int axis = 0; axis < Dim; ++axis)
    for (int side = 0; side < 2; ++side)
      for (int c = 0; c < num_cells_; ++c) {
        const auto ci = cell_index(c);
        if (ci[axis] == (side == 0 ? 0 : cells_[axis] - 1)) bfaces_.push_back({Face{axis, side}, c});
      }

  // Dirichlet coefficients: value and tangential derivatives at nodes on a Dirichlet face
  dmask_.assign(ndofs(Dim), 0);
  for (int n = 0; n < num_nodes_; ++n) {
    int r = n;
    std::array<int, Dim> idx;
    for (int k = 0; k < Dim; ++k) {
      idx[k] = r % (cells_[k] + 1);
      r /= cells_[k] + 1;
    }
    for (const Face& f : dirichlet_) {
      const int target = f.side == 0 ? 0 : cells_[f.axis];
      if (idx[f.axis] != target) continue;
      for (int e = 0; e < kNodeDofs; ++e) {
        if ((e >> f.axis) & 1) continue;
        for (int a = 0; a < Dim; ++a) dmask_[(n * kNodeDofs + e) * Dim + a] = 1;
      }
    }
  }
  identity_ = interpolate_affine(Tensor2<Dim>::Identity(), Vec<Dim>::Zero());
}

template <int Dim>
bool StructuredGrid<Dim>::is_dirichlet(const Face& f) const {
  return std::find(dirichlet_.begin(), dirichlet_.end(), f) != dirichlet_.end();
}

template <int Dim>
double StructuredGrid<Dim>::measure() const {
  double m = 1.0;
  for (int k = 0; k < Dim; ++k) m *= lengths_[k];
  return m;
}

template <int Dim>
double StructuredGrid<Dim>::boundary_measure() const {
  double s = 0.0;
  for (int axis = 0; axis < Dim; ++axis) {
    double f = 1.0;
    for (int k = 0; k < Dim; ++k)
      if (k != axis) f *= lengths_[k];
    s += 2.0 * f;
  }
  return s;
}

template <int Dim>
int StructuredGrid<Dim>::node_id(const std::array<int, Dim>& idx) const {
  int id = 0, stride = 1;
  for (int k = 0; k < Dim; ++k) {
    id += idx[k] * stride;
    stride *= cells_[k] + 1;
  }
  return id;
}

template <int Dim>
std::array<int, Dim> StructuredGrid<Dim>::cell_index(int cell) const {
  std::array<int, Dim> idx;
  for (int k = 0; k < Dim; ++k) {
    idx[k] = cell % cells_[k];
    cell /= cells_[k];
  }
  return idx;
}

template <int Dim>
Vec<Dim> StructuredGrid<Dim>::node_coord(int node) const {
  Vec<Dim> x;
  for (int k = 0; k < Dim; ++k) {
    x(k) = (node % (cells_[k] + 1)) * h_[k];
    node /= cells_[k] + 1;
  }
  return x;
}

template <int Dim>
Vec<Dim> StructuredGrid<Dim>::qp_coord(int cell, int q) const {
  const auto ci = cell_index(cell);
  Vec<Dim> x;
  for (int k = 0; k < Dim; ++k) x(k) = (ci[k] + xq_ref_[q](k)) * h_[k];
  return x;
}

template <int Dim>
Vec<Dim> StructuredGrid<Dim>::face_qp_coord(const BoundaryFace& bf, int q) const {
  const auto ci = cell_index(bf.cell);
  Vec<Dim> t = faceX_ref_[bf.face.axis][q];
  t(bf.face.axis) = bf.face.side;
  Vec<Dim> x;
  for (int k = 0; k < Dim; ++k) x(k) = (ci[k] + t(k)) * h_[k];
  return x;
}

template <int Dim>
std::array<int, StructuredGrid<Dim>::kCellBasis> StructuredGrid<Dim>::cell_basis(int cell) const {
  const auto ci = cell_index(cell);
  std::array<int, kCellBasis> out;
  for (int v = 0; v < kNodeDofs; ++v) {
    std::array<int, Dim> idx;
    for (int k = 0; k < Dim; ++k) idx[k] = ci[k] + ((v >> k) & 1);
    const int node = node_id(idx);
    for (int e = 0; e < kNodeDofs; ++e) out[v * kNodeDofs + e] = node * kNodeDofs + e;
  }
  return out;
}

template <int Dim>
void StructuredGrid<Dim>::cell_dofs(int cell, int ncomp, int* out) const {
  const auto cb = cell_basis(cell);
  for (int b = 0; b < kCellBasis; ++b)
    for (int c = 0; c < ncomp; ++c) out[b * ncomp + c] = cb[b] * ncomp + c;
}

template <int Dim>
NodalField StructuredGrid<Dim>::interpolate(int ncomp,
                                            const std::function<double(const Vec<Dim>&, int, int)>& fn) const {
  NodalField u(ndofs(ncomp));
  for (int n = 0; n < num_nodes_; ++n) {
    const Vec<Dim> x = node_coord(n);
    for (int e = 0; e < kNodeDofs; ++e)
      for (int c = 0; c < ncomp; ++c) u((n * kNodeDofs + e) * ncomp + c) = fn(x, c, e);
  }
  return u;
}

template <int Dim>
NodalField StructuredGrid<Dim>::interpolate_affine(const Tensor2<Dim>& A, const Vec<Dim>& b) const {
  return interpolate(Dim, [&](const Vec<Dim>& x, int c, int mask) -> double {
    if (mask == 0) return A.row(c).dot(x) + b(c);
    for (int k = 0; k < Dim; ++k)
      if (mask == (1 << k)) return A(c, k);
    return 0.0;
  });
}

template <int Dim>
NodalField StructuredGrid<Dim>::constant_scalar(double v) const {
  NodalField u = NodalField::Zero(ndofs(1));
  for (int n = 0; n < num_nodes_; ++n) u(n * kNodeDofs) = v;
  return u;
}

template <int Dim>
void StructuredGrid<Dim>::eliminate_dirichlet(NodalField& r) const {
  if (r.size() != static_cast<Eigen::Index>(dmask_.size()))
    throw ContractViolation("eliminate_dirichlet: size mismatch");
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (dmask_[i]) r(i) = 0.0;
}

template <int Dim>
double StructuredGrid<Dim>::dirichlet_defect(const NodalField& y) const {
  if (y.size() != identity_.size()) throw ContractViolation("dirichlet_defect: size mismatch");
  double m = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (dmask_[i]) m = std::max(m, std::abs(y(i) - identity_(i)));
  return m;
}

template <int Dim>
Kinematics<Dim> StructuredGrid<Dim>::eval_kinematics(const NodalField& y) const {
  if (y.size() != ndofs(Dim))
    throw ContractViolation("eval_kinematics: field has " + std::to_string(y.size()) + " coefficients, expected " +
                            std::to_string(ndofs(Dim)));
  Kinematics<Dim> k;
  const int nq = num_qp();
  k.y.resize(nq);
  k.F.resize(nq);
  k.G.resize(nq);
  k.detF.resize(nq);
  std::array<int, kVecLocal> dofs;
  Eigen::Matrix<double, kVecLocal, 1> loc;
  for (int c = 0; c < num_cells_; ++c) {
    cell_dofs(c, Dim, dofs.data());
    for (int i = 0; i < kVecLocal; ++i) loc(i) = y(dofs[i]);
    for (int q = 0; q < kCellQP; ++q) {
      const int g = c * kCellQP + q;
      k.y[g] = BY_[q] * loc;
      k.F[g] = unflatten<Dim>(BF_[q] * loc);
      k.G[g] = BG_[q] * loc;
      k.detF[g] = k.F[g].determinant();
    }
  }
  return k;
}

template <int Dim>
ScalarAtQP<Dim> StructuredGrid<Dim>::eval_scalar(const NodalField& theta) const {
  if (theta.size() != ndofs(1)) throw ContractViolation("eval_scalar: size mismatch");
  ScalarAtQP<Dim> s;
  s.value.resize(num_qp());
  s.grad.resize(num_qp());
  Eigen::Matrix<double, kCellBasis, 1> loc;
  for (int c = 0; c < num_cells_; ++c) {
    const auto cb = cell_basis(c);
    for (int b = 0; b < kCellBasis; ++b) loc(b) = theta(cb[b]);
    for (int q = 0; q < kCellQP; ++q) {
      s.value[c * kCellQP + q] = N_.row(q).dot(loc);
      s.grad[c * kCellQP + q] = dN_[q] * loc;
    }
  }
  return s;
}

template <int Dim>
std::vector<double> StructuredGrid<Dim>::eval_scalar_face(const NodalField& theta) const {
  if (theta.size() != ndofs(1)) throw ContractViolation("eval_scalar_face: size mismatch");
  std::vector<double> out;
  out.reserve(num_face_qp());
  Eigen::Matrix<double, kCellBasis, 1> loc;
  for (const auto& bf : bfaces_) {
    const auto cb = cell_basis(bf.cell);
    for (int b = 0; b < kCellBasis; ++b) loc(b) = theta(cb[b]);
    const auto& Nf = face_N(bf.face);
    for (int q = 0; q < kFaceQP; ++q) out.push_back(Nf.row(q).dot(loc));
  }
  return out;
}

template <int Dim>
std::vector<Vec<Dim>> StructuredGrid<Dim>::eval_vector_face(const NodalField& y) const {
  if (y.size() != ndofs(Dim)) throw ContractViolation("eval_vector_face: size mismatch");
  std::vector<Vec<Dim>> out;
  out.reserve(num_face_qp());
  std::array<int, kVecLocal> dofs;
  for (const auto& bf : bfaces_) {
    cell_dofs(bf.cell, Dim, dofs.data());
    const auto& Nf = face_N(bf.face);
    for (int q = 0; q < kFaceQP; ++q) {
      Vec<Dim> v = Vec<Dim>::Zero();
      for (int b = 0; b < kCellBasis; ++b)
        for (int a = 0; a < Dim; ++a) v(a) += Nf(q, b) * y(dofs[b * Dim + a]);
      out.push_back(v);
    }
  }
  return out;
}

template <int Dim>
double StructuredGrid<Dim>::assemble_scalar(const std::vector<double>& density) const {
  if (static_cast<int>(density.size()) != num_qp()) throw ContractViolation("assemble_scalar: size mismatch");
  double s = 0.0;
  for (int c = 0; c < num_cells_; ++c)
    for (int q = 0; q < kCellQP; ++q) s += wq_[q] * density[c * kCellQP + q];
  return s;
}

template <int Dim>
NodalField StructuredGrid<Dim>::assemble_load(const std::vector<Vec<Dim>>& bulk,
                                              const std::vector<Vec<Dim>>& traction) const {
  if (!bulk.empty() && static_cast<int>(bulk.size()) != num_qp())
    throw ContractViolation("assemble_load: bulk force size mismatch");
  if (!traction.empty() && static_cast<int>(traction.size()) != num_face_qp())
    throw ContractViolation("assemble_load: traction size mismatch");
  NodalField L = NodalField::Zero(ndofs(Dim));
  std::array<int, kVecLocal> dofs;
  if (!bulk.empty())
    for (int c = 0; c < num_cells_; ++c) {
      cell_dofs(c, Dim, dofs.data());
      for (int q = 0; q < kCellQP; ++q) {
        const Eigen::Matrix<double, kVecLocal, 1> r = BY_[q].transpose() * bulk[c * kCellQP + q];
        for (int i = 0; i < kVecLocal; ++i) L(dofs[i]) += wq_[q] * r(i);
      }
    }
  if (!traction.empty())
    for (std::size_t f = 0; f < bfaces_.size(); ++f) {
      const auto& bf = bfaces_[f];
      if (is_dirichlet(bf.face)) continue;
      cell_dofs(bf.cell, Dim, dofs.data());
      const auto& Nf = face_N(bf.face);
      for (int q = 0; q < kFaceQP; ++q) {
        const Vec<Dim>& t = traction[f * kFaceQP + q];
        const double w = faceW_[bf.face.axis][q];
        for (int b = 0; b < kCellBasis; ++b)
          for (int a = 0; a < Dim; ++a) L(dofs[b * Dim + a]) += w * Nf(q, b) * t(a);
      }
    }
  return L;
}

template <int Dim>
NodalField StructuredGrid<Dim>::assemble_gradient(const std::vector<Tensor2<Dim>>& stress,
                                                  const std::vector<Tensor3<Dim>>& hyperstress,
                                                  const std::vector<Vec<Dim>>& bulk,
                                                  const std::vector<Vec<Dim>>& traction) const {
  if (static_cast<int>(stress.size()) != num_qp() || static_cast<int>(hyperstress.size()) != num_qp())
    throw ContractViolation("assemble_gradient: stress field size mismatch");
  NodalField r = NodalField::Zero(ndofs(Dim));
  std::array<int, kVecLocal> dofs;
  for (int c = 0; c < num_cells_; ++c) {
    cell_dofs(c, Dim, dofs.data());
    Eigen::Matrix<double, kVecLocal, 1> loc = Eigen::Matrix<double, kVecLocal, 1>::Zero();
    for (int q = 0; q < kCellQP; ++q) {
      const int g = c * kCellQP + q;
      loc += wq_[q] * (BF_[q].transpose() * flatten<Dim>(stress[g]) + BG_[q].transpose() * hyperstress[g]);
    }
    for (int i = 0; i < kVecLocal; ++i) r(dofs[i]) += loc(i);
  }
  if (!bulk.empty() || !traction.empty()) r -= assemble_load(bulk, traction);
  eliminate_dirichlet(r);
  return r;
}

template <int Dim>
typename StructuredGrid<Dim>::RobinResult StructuredGrid<Dim>::boundary_assemble(
    const NodalField& theta, const std::vector<double>& theta_b, double kappa) const {
  if (theta.size() != ndofs(1)) throw ContractViolation("boundary_assemble: size mismatch");
  if (static_cast<int>(theta_b.size()) != num_face_qp())
    throw ContractViolation("boundary_assemble: boundary datum size mismatch");
  RobinResult out{0.0, NodalField::Zero(ndofs(1))};
  Eigen::Matrix<double, kCellBasis, 1> loc;
  for (std::size_t f = 0; f < bfaces_.size(); ++f) {
    const auto& bf = bfaces_[f];
    const auto cb = cell_basis(bf.cell);
    for (int b = 0; b < kCellBasis; ++b) loc(b) = theta(cb[b]);
    const auto& Nf = face_N(bf.face);
    for (int q = 0; q < kFaceQP; ++q) {
      const double w = faceW_[bf.face.axis][q];
      const double d = Nf.row(q).dot(loc) - theta_b[f * kFaceQP + q];
      out.energy += 0.5 * kappa * w * d * d;
      for (int b = 0; b < kCellBasis; ++b) out.residual(cb[b]) += kappa * w * d * Nf(q, b);
    }
  }
  return out;
}

template <int Dim>
Eigen::SparseMatrix<double> StructuredGrid<Dim>::boundary_mass() const {
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& bf : bfaces_) {
    const auto cb = cell_basis(bf.cell);
    const auto& Nf = face_N(bf.face);
    Eigen::Matrix<double, kCellBasis, kCellBasis> M = Eigen::Matrix<double, kCellBasis, kCellBasis>::Zero();
    for (int q = 0; q < kFaceQP; ++q) M += faceW_[bf.face.axis][q] * Nf.row(q).transpose() * Nf.row(q);
    for (int i = 0; i < kCellBasis; ++i)
      for (int j = 0; j < kCellBasis; ++j) trip.emplace_back(cb[i], cb[j], M(i, j));
  }
  Eigen::SparseMatrix<double> A(ndofs(1), ndofs(1));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

template <int Dim>
Eigen::SparseMatrix<double> StructuredGrid<Dim>::scalar_mass() const {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::Matrix<double, kCellBasis, kCellBasis> M = Eigen::Matrix<double, kCellBasis, kCellBasis>::Zero();
  for (int q = 0; q < kCellQP; ++q) M += wq_[q] * N_.row(q).transpose() * N_.row(q);
  for (int c = 0; c < num_cells_; ++c) {
    const auto cb = cell_basis(c);
    for (int i = 0; i < kCellBasis; ++i)
      for (int j = 0; j < kCellBasis; ++j) trip.emplace_back(cb[i], cb[j], M(i, j));
  }
  Eigen::SparseMatrix<double> A(ndofs(1), ndofs(1));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

template <int Dim>
Eigen::SparseMatrix<double> StructuredGrid<Dim>::scalar_h1() const {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::Matrix<double, kCellBasis, kCellBasis> M = Eigen::Matrix<double, kCellBasis, kCellBasis>::Zero();
  for (int q = 0; q < kCellQP; ++q)
    M += wq_[q] * (N_.row(q).transpose() * N_.row(q) + dN_[q].transpose() * dN_[q]);
  for (int c = 0; c < num_cells_; ++c) {
    const auto cb = cell_basis(c);
    for (int i = 0; i < kCellBasis; ++i)
      for (int j = 0; j < kCellBasis; ++j) trip.emplace_back(cb[i], cb[j], M(i, j));
  }
  Eigen::SparseMatrix<double> A(ndofs(1), ndofs(1));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

template struct Kinematics<2>;
template struct Kinematics<3>;
template class StructuredGrid<2>;
template class StructuredGrid<3>;

}  // namespace kvt
