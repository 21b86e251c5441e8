#pragma once

// Factorizations of the damped normal matrix (J^T J + mu I). Each solver is
// factored once per damping value and then solves any number of right-hand
// sides, which is what lets the modified LM iteration get its second step
// from the same factorization.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "cplm/cp_model.hpp"
#include "cplm/error.hpp"
#include "cplm/jacobian.hpp"

namespace cplm {

// Dense Cholesky of gram + mu I.
class DenseDampedSolver {
 public:
  explicit DenseDampedSolver(Matrix gram) : gram_(std::move(gram)) {
    if (gram_.rows() != gram_.cols()) throw DomainError("DenseDampedSolver: gram must be square");
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(gram_.rows()); }
  const Matrix& gram() const noexcept { return gram_; }

  // False when the damped matrix is not numerically positive definite.
  bool factor(double mu) {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw DomainError("damping mu must be positive and finite");
    factor_ = gram_;
    factor_.diagonal().array() += mu;
    Eigen::LLT<Eigen::Ref<Matrix>> llt(factor_);
    factored_ = llt.info() == Eigen::Success && factor_.diagonal().allFinite();
    return factored_;
  }

  // h with (gram + mu I) h = -grad.
  Vector solve(const Vector& grad) const {
    if (!factored_) throw SolverError("DenseDampedSolver: solve before successful factor", 0.0);
    if (grad.size() != gram_.rows()) throw DomainError("DenseDampedSolver: rhs length mismatch");
    Vector h = -grad;
    auto L = factor_.triangularView<Eigen::Lower>();
    L.solveInPlace(h);
    L.adjoint().solveInPlace(h);
    return h;
  }

 private:
  Matrix gram_;
  Matrix factor_;
  bool factored_ = false;
};

// One-shot solve of (gram + mu I) h = -grad.
inline Vector solve_damped(const Matrix& gram, const Vector& grad, double mu) {
  if (gram.rows() != grad.size()) throw DomainError("solve_damped: gram/grad size mismatch");
  DenseDampedSolver s(gram);
  if (!s.factor(mu)) throw SolverError("solve_damped: Cholesky failed", mu);
  return s.solve(grad);
}

namespace detail {

inline int third_mode(int a, int b) { return 3 - a - b; }

}  // namespace detail

// Closed-form pieces of J^T J for a CP model. With W_m = F_m^T F_m:
//   same-mode block m:   (Gamma_m kron I), Gamma_m = hadamard of the other two W
//   cross block (m, n):  entry (m(r,i), n(s,j)) = F_m(i,s) F_n(j,r) W_t(r,s)
// where t is the remaining mode.
class CpGramStructure {
 public:
  explicit CpGramStructure(const CpModel& model) : model_(model), shape_(model.shape()) {
    for (int m = 0; m < 3; ++m) W_[m] = model_.factor(m).transpose() * model_.factor(m);
    for (int m = 0; m < 3; ++m) {
      const int a = (m + 1) % 3, b = (m + 2) % 3;
      Gamma_[m] = W_[a].cwiseProduct(W_[b]);
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  const CpModel& model() const noexcept { return model_; }
  const Matrix& W(int mode) const noexcept { return W_[mode]; }
  const Matrix& Gamma(int mode) const noexcept { return Gamma_[mode]; }
  std::size_t extent(int mode) const noexcept { return mode_extent(shape_.dims, mode); }
  Eigen::Index offset(int mode) const noexcept { return static_cast<Eigen::Index>(column_offset(shape_, mode)); }

  // Cross block (m <- n) applied to an n-block given as n_n x R matrix.
  Matrix apply_cross(int m, int n, const Matrix& V) const {
    const Matrix N = model_.factor(n).transpose() * V;
    const Matrix& Wt = W_[detail::third_mode(m, n)];
    return model_.factor(m) * Wt.cwiseProduct(N).transpose();
  }

  // Full J^T J v without forming J^T J.
  Vector apply(const Vector& v) const {
    const auto R = static_cast<Eigen::Index>(shape_.rank);
    Vector out = Vector::Zero(v.size());
    for (int m = 0; m < 3; ++m) {
      const auto nm = static_cast<Eigen::Index>(extent(m));
      Matrix acc = v.segment(offset(m), nm * R).reshaped(nm, R) * Gamma_[m];
      for (int n = 0; n < 3; ++n) {
        if (n == m) continue;
        const auto nn = static_cast<Eigen::Index>(extent(n));
        acc += apply_cross(m, n, v.segment(offset(n), nn * R).reshaped(nn, R));
      }
      out.segment(offset(m), nm * R) = acc.reshaped();
    }
    return out;
  }

  // Dense J^T J assembled from the closed forms.
  Matrix dense() const {
    const auto P = static_cast<Eigen::Index>(shape_.params());
    check_dense_guard(shape_.params(), shape_.params(), "CpGramStructure::dense");
    const auto R = static_cast<Eigen::Index>(shape_.rank);
    Matrix G = Matrix::Zero(P, P);
    for (int m = 0; m < 3; ++m) {
      const auto nm = static_cast<Eigen::Index>(extent(m));
      for (int n = 0; n < 3; ++n) {
        const auto nn = static_cast<Eigen::Index>(extent(n));
        for (Eigen::Index r = 0; r < R; ++r)
          for (Eigen::Index s = 0; s < R; ++s) {
            auto blk = G.block(offset(m) + r * nm, offset(n) + s * nn, nm, nn);
            if (m == n) {
              blk.diagonal().setConstant(Gamma_[m](r, s));
            } else {
              const double w = W_[detail::third_mode(m, n)](r, s);
              blk = w * model_.factor(m).col(s) * model_.factor(n).col(r).transpose();
            }
          }
      }
    }
    return G;
  }

 private:
  CpModel model_;
  Shape shape_;
  std::array<Matrix, 3> W_;
  std::array<Matrix, 3> Gamma_;
};

// Solves (J^T J + mu I) h = -g for a CP model by eliminating the mode with
// the largest extent. That mode's diagonal block is (Gamma + mu I) kron I,
// inverted through an R x R Cholesky; the remaining Schur complement of
// order R(n_y + n_z) is factored densely.
class SchurDampedSolver {
 public:
  explicit SchurDampedSolver(const CpModel& model) : gs_(model) {
    eliminated_ = 0;
    for (int m = 1; m < 3; ++m)
      if (gs_.extent(m) > gs_.extent(eliminated_)) eliminated_ = m;
    kept_ = {(eliminated_ + 1) % 3, (eliminated_ + 2) % 3};
    if (kept_[0] > kept_[1]) std::swap(kept_[0], kept_[1]);
  }

  std::size_t size() const noexcept { return gs_.shape().params(); }
  int eliminated_mode() const noexcept { return eliminated_; }
  std::size_t reduced_size() const noexcept {
    return gs_.shape().rank * (gs_.extent(kept_[0]) + gs_.extent(kept_[1]));
  }

  bool factor(double mu) {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw DomainError("damping mu must be positive and finite");
    factored_ = false;
    mu_ = mu;
    const auto R = static_cast<Eigen::Index>(gs_.shape().rank);
    const int X = eliminated_;

    Matrix M = gs_.Gamma(X);
    M.diagonal().array() += mu;
    Eigen::LLT<Matrix> small(M);
    if (small.info() != Eigen::Success) return false;
    D_ = small.solve(Matrix::Identity(R, R));
    D_ = 0.5 * (D_ + D_.transpose());

    const int Y = kept_[0], Z = kept_[1];
    const auto nY = static_cast<Eigen::Index>(gs_.extent(Y));
    const auto nZ = static_cast<Eigen::Index>(gs_.extent(Z));
    const Eigen::Index n = R * (nY + nZ);
    S_.resize(n, n);
    const Matrix& WX = gs_.W(X);

    auto fill = [&](int y, int z, Eigen::Index oy, Eigen::Index oz) {
      const auto ny = static_cast<Eigen::Index>(gs_.extent(y));
      const auto nz = static_cast<Eigen::Index>(gs_.extent(z));
      const Matrix& Fy = gs_.model().factor(y);
      const Matrix& Fz = gs_.model().factor(z);
      const Matrix& Wyx = gs_.W(detail::third_mode(y, X));
      const Matrix& Wxz = gs_.W(detail::third_mode(X, z));
      // Row block s of MT holds (Fz diag(Wxz(:, s)))^T.
      Matrix MT(R, R * nz);
      for (Eigen::Index s = 0; s < R; ++s)
        MT.middleCols(s * nz, nz) = (Fz * Wxz.col(s).asDiagonal()).transpose();
      Matrix L(ny, R);
      Matrix prod(ny, R * nz);
      for (Eigen::Index r = 0; r < R; ++r) {
        L.noalias() = Fy * Wyx.row(r).asDiagonal() * D_;
        prod.noalias() = L * MT;
        for (Eigen::Index s = 0; s < R; ++s) {
          auto blk = S_.block(oy + r * ny, oz + s * nz, ny, nz);
          blk = -WX(r, s) * prod.middleCols(s * nz, nz);
          if (y == z) {
            blk.diagonal().array() += gs_.Gamma(y)(r, s);
          } else {
            blk.noalias() += gs_.W(detail::third_mode(y, z))(r, s) * Fy.col(s) * Fz.col(r).transpose();
          }
        }
      }
    };
    fill(Y, Y, 0, 0);
    fill(Y, Z, 0, R * nY);
    fill(Z, Z, R * nY, R * nY);
    S_.block(R * nY, 0, R * nZ, R * nY) = S_.block(0, R * nY, R * nY, R * nZ).transpose();
    S_.diagonal().array() += mu;

    Eigen::LLT<Eigen::Ref<Matrix>> llt(S_);
    factored_ = llt.info() == Eigen::Success && S_.diagonal().allFinite();
    return factored_;
  }

  // Eliminating an ill-conditioned block loses accuracy when mu is tiny, so
  // the Schur solve is followed by iterative refinement against the exact
  // J^T J product.
  Vector solve(const Vector& grad) const {
    if (!factored_) throw SolverError("SchurDampedSolver: solve before successful factor", 0.0);
    if (static_cast<std::size_t>(grad.size()) != size()) throw DomainError("SchurDampedSolver: rhs length mismatch");
    Vector h = solve_once(grad);
    const double target = 1e-14 * grad.norm();
    for (int pass = 0; pass < kRefinementPasses; ++pass) {
      const Vector r = -grad - gs_.apply(h) - mu_ * h;
      if (!(r.norm() > target)) break;
      h += solve_once(-r);
    }
    return h;
  }

 private:
  static constexpr int kRefinementPasses = 3;

  Vector solve_once(const Vector& grad) const {
    const auto R = static_cast<Eigen::Index>(gs_.shape().rank);
    const int X = eliminated_, Y = kept_[0], Z = kept_[1];
    const auto nX = static_cast<Eigen::Index>(gs_.extent(X));
    const auto nY = static_cast<Eigen::Index>(gs_.extent(Y));
    const auto nZ = static_cast<Eigen::Index>(gs_.extent(Z));
    auto block = [&](const Vector& v, int m, Eigen::Index nm) -> Matrix {
      return -v.segment(gs_.offset(m), nm * R).reshaped(nm, R);
    };
    const Matrix bX = block(grad, X, nX);
    const Matrix bY = block(grad, Y, nY);
    const Matrix bZ = block(grad, Z, nZ);

    const Matrix u = bX * D_;
    Vector rhs(R * (nY + nZ));
    rhs.segment(0, R * nY) = (bY - gs_.apply_cross(Y, X, u)).reshaped();
    rhs.segment(R * nY, R * nZ) = (bZ - gs_.apply_cross(Z, X, u)).reshaped();

    auto L = S_.triangularView<Eigen::Lower>();
    L.solveInPlace(rhs);
    L.adjoint().solveInPlace(rhs);

    const Matrix hY = rhs.segment(0, R * nY).reshaped(nY, R);
    const Matrix hZ = rhs.segment(R * nY, R * nZ).reshaped(nZ, R);
    const Matrix hX = (bX - gs_.apply_cross(X, Y, hY) - gs_.apply_cross(X, Z, hZ)) * D_;

    Vector h(grad.size());
    h.segment(gs_.offset(X), nX * R) = hX.reshaped();
    h.segment(gs_.offset(Y), nY * R) = hY.reshaped();
    h.segment(gs_.offset(Z), nZ * R) = hZ.reshaped();
    return h;
  }

  CpGramStructure gs_;
  int eliminated_ = 0;
  std::array<int, 2> kept_{1, 2};
  Matrix D_;
  Matrix S_;
  double mu_ = 0.0;
  bool factored_ = false;
};

}  // namespace cplm
