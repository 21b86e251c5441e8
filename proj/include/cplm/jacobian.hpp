#pragma once

// Structured Jacobian of the CP residual F(x) = X - sum_r a_r o b_r o c_r.
//
// Column layout follows x = [vec(A); vec(B); vec(C)]: the column of factor
// entry (mode m, component r, row i) is offset(m) + r * n_m + i. Block r of
// each section is
//
//   J_a^r = -(c_r kron b_r kron I_I),
//   J_b^r = -(c_r kron I_J kron a_r),
//   J_c^r = -(I_K kron b_r kron a_r),
//
// so every row carries exactly 3R structural entries and J has 3RQ of them.

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>

#include "cplm/cp_model.hpp"
#include "cplm/error.hpp"

namespace cplm {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

// Entries beyond which dense Jacobian copies are refused.
inline constexpr std::size_t kDenseGuard = 10'000'000;

class SparseJacobian {
 public:
  SparseJacobian() = default;
  explicit SparseJacobian(SparseMatrix m) : m_(std::move(m)) { m_.makeCompressed(); }

  const SparseMatrix& matrix() const noexcept { return m_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(m_.cols()); }
  // Stored positions, including entries whose value happens to be zero.
  std::size_t structural_nonzeros() const noexcept { return static_cast<std::size_t>(m_.nonZeros()); }

  Vector apply(const Vector& h) const { return m_ * h; }
  Vector apply_transpose(const Vector& f) const { return m_.transpose() * f; }

 private:
  SparseMatrix m_;
};

struct NormalSystem {
  Matrix gram;  // J^T J
  Vector grad;  // J^T F
};

inline std::size_t column_offset(const Shape& s, int mode) {
  switch (mode) {
    case 0: return 0;
    case 1: return s.rank * s.dims.I;
    default: return s.rank * (s.dims.I + s.dims.J);
  }
}

inline std::size_t mode_extent(const Dims& d, int mode) { return mode == 0 ? d.I : (mode == 1 ? d.J : d.K); }

inline SparseJacobian build_jacobian(const CpModel& model) {
  const Shape s = model.shape();
  const std::size_t I = s.dims.I, J = s.dims.J, K = s.dims.K, R = s.rank;
  const Matrix& A = model.A();
  const Matrix& B = model.B();
  const Matrix& C = model.C();
  const auto Q = static_cast<Eigen::Index>(s.residuals());
  const auto P = static_cast<Eigen::Index>(s.params());

  const std::size_t nnz = 3 * R * static_cast<std::size_t>(Q);
  if (nnz > static_cast<std::size_t>(std::numeric_limits<int>::max()))
    throw CapacityError("build_jacobian: " + std::to_string(nnz) + " structural entries exceed index range");

  // Compressed storage is filled directly; rows ascend within each column.
  SparseMatrix m(Q, P);
  m.resizeNonZeros(static_cast<Eigen::Index>(nnz));
  int* outer = m.outerIndexPtr();
  int* inner = m.innerIndexPtr();
  double* val = m.valuePtr();
  std::size_t pos = 0, col = 0;
  auto e = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  auto put = [&](std::size_t row, double v) {
    inner[pos] = static_cast<int>(row);
    val[pos++] = v;
  };

  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < I; ++i) {
      outer[col++] = static_cast<int>(pos);
      for (std::size_t k = 0; k < K; ++k) {
        const double c = -C(e(k), e(r));
        for (std::size_t j = 0; j < J; ++j) put(i + I * (j + J * k), c * B(e(j), e(r)));
      }
    }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < J; ++j) {
      outer[col++] = static_cast<int>(pos);
      for (std::size_t k = 0; k < K; ++k) {
        const double c = -C(e(k), e(r));
        for (std::size_t i = 0; i < I; ++i) put(i + I * (j + J * k), c * A(e(i), e(r)));
      }
    }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < K; ++k) {
      outer[col++] = static_cast<int>(pos);
      for (std::size_t j = 0; j < J; ++j) {
        const double b = -B(e(j), e(r));
        for (std::size_t i = 0; i < I; ++i) put(i + I * (j + J * k), b * A(e(i), e(r)));
      }
    }
  outer[col] = static_cast<int>(pos);
  return SparseJacobian(std::move(m));
}

inline void check_dense_guard(std::size_t rows, std::size_t cols, const char* what) {
  if (rows != 0 && cols > kDenseGuard / rows)
    throw CapacityError(std::string(what) + ": dense " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " exceeds the " + std::to_string(kDenseGuard) + "-entry guard");
}

inline Matrix densify(const SparseJacobian& j) {
  check_dense_guard(j.rows(), j.cols(), "densify");
  return Matrix(j.matrix());
}

// J^T J accumulated row by row (each row holds 3R entries), then mirrored.
inline Matrix gram_matrix(const SparseJacobian& j) {
  const auto P = static_cast<Eigen::Index>(j.cols());
  check_dense_guard(j.cols(), j.cols(), "gram_matrix");
  Eigen::SparseMatrix<double, Eigen::RowMajor> rows = j.matrix();
  Matrix G = Matrix::Zero(P, P);
  for (Eigen::Index q = 0; q < rows.outerSize(); ++q) {
    const auto begin = rows.outerIndexPtr()[q];
    const auto end = rows.outerIndexPtr()[q + 1];
    const int* idx = rows.innerIndexPtr();
    const double* val = rows.valuePtr();
    for (auto a = begin; a < end; ++a) {
      const double va = val[a];
      const int ca = idx[a];
      for (auto b = a; b < end; ++b) G(ca, idx[b]) += va * val[b];  // ca <= idx[b]
    }
  }
  return Matrix(G.selfadjointView<Eigen::Upper>());
}

inline NormalSystem normal_system(const SparseJacobian& j, const Vector& f) {
  if (static_cast<std::size_t>(f.size()) != j.rows())
    throw DomainError("normal_system: residual length " + std::to_string(f.size()) + " != Q = " +
                      std::to_string(j.rows()));
  return {gram_matrix(j), j.apply_transpose(f)};
}

inline Vector singular_values(const SparseJacobian& j) {
  Matrix d = densify(j);
  if (d.size() == 0) return {};
  Eigen::BDCSVD<Matrix> svd(d);
  return svd.singularValues();
}

// Number of singular values strictly above tol * sigma_max.
inline std::size_t numerical_rank(const SparseJacobian& j, double tol = 1e-10) {
  Vector sv = singular_values(j);
  if (sv.size() == 0) return 0;
  const double smax = sv.maxCoeff();
  if (!(smax > 0.0)) return 0;
  return static_cast<std::size_t>((sv.array() > tol * smax).count());
}

// `row,col,value` triplets with 1-based indices, in storage order.
inline void write_sparsity_csv(std::ostream& out, const SparseJacobian& j) {
  out << "row,col,value\n";
  const SparseMatrix& m = j.matrix();
  char buf[64];
  for (Eigen::Index c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
      std::snprintf(buf, sizeof buf, "%.17g", it.value());
      out << (it.row() + 1) << ',' << (c + 1) << ',' << buf << '\n';
    }
}

}  // namespace cplm
