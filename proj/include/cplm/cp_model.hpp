#pragma once

// Rank-R CP models: factor matrices, the stacked parameter vector
// x = [vec(A); vec(B); vec(C)], reconstruction and the residual function.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "cplm/binary_io.hpp"
#include "cplm/error.hpp"
#include "cplm/random.hpp"
#include "cplm/tensor.hpp"

namespace cplm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Shape {
  Dims dims;
  std::size_t rank = 0;

  std::size_t params() const noexcept { return rank * (dims.I + dims.J + dims.K); }
  std::size_t residuals() const noexcept { return dims.count(); }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class CpModel {
 public:
  CpModel() = default;

  CpModel(Matrix A, Matrix B, Matrix C) : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
    if (A_.cols() < 1 || A_.cols() != B_.cols() || A_.cols() != C_.cols())
      throw DomainError("CpModel: factor matrices need equal, positive column counts (got " +
                        std::to_string(A_.cols()) + ", " + std::to_string(B_.cols()) + ", " +
                        std::to_string(C_.cols()) + ")");
    if (A_.rows() < 1 || B_.rows() < 1 || C_.rows() < 1)
      throw DomainError("CpModel: factor matrices need at least one row");
    if (!A_.allFinite() || !B_.allFinite() || !C_.allFinite())
      throw DomainError("CpModel: non-finite factor entry");
  }

  static CpModel zeros(const Shape& s) {
    return CpModel(Matrix::Zero(s.dims.I, s.rank), Matrix::Zero(s.dims.J, s.rank),
                   Matrix::Zero(s.dims.K, s.rank));
  }

  const Matrix& A() const noexcept { return A_; }
  const Matrix& B() const noexcept { return B_; }
  const Matrix& C() const noexcept { return C_; }
  // Factor matrix by mode (0, 1, 2).
  const Matrix& factor(int mode) const noexcept { return mode == 0 ? A_ : (mode == 1 ? B_ : C_); }

  std::size_t rank() const noexcept { return static_cast<std::size_t>(A_.cols()); }
  Dims dims() const noexcept {
    return {static_cast<std::size_t>(A_.rows()), static_cast<std::size_t>(B_.rows()),
            static_cast<std::size_t>(C_.rows())};
  }
  Shape shape() const noexcept { return {dims(), rank()}; }

  friend bool operator==(const CpModel& a, const CpModel& b) {
    return a.A_.rows() == b.A_.rows() && a.B_.rows() == b.B_.rows() && a.C_.rows() == b.C_.rows() &&
           a.A_.cols() == b.A_.cols() && a.A_ == b.A_ && a.B_ == b.B_ && a.C_ == b.C_;
  }

 private:
  Matrix A_, B_, C_;
};

class ParamVector {
 public:
  ParamVector() = default;

  ParamVector(Shape shape, Vector data) : shape_(shape), data_(std::move(data)) {
    if (shape_.rank < 1) throw DomainError("ParamVector: rank must be >= 1");
    if (static_cast<std::size_t>(data_.size()) != shape_.params())
      throw DomainError("ParamVector: length " + std::to_string(data_.size()) + " != R(I+J+K) = " +
                        std::to_string(shape_.params()));
  }

  const Shape& shape() const noexcept { return shape_; }
  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(data_.size()); }

 private:
  Shape shape_{};
  Vector data_;
};

inline ParamVector pack(const CpModel& m) {
  const Shape s = m.shape();
  const auto I = static_cast<Eigen::Index>(s.dims.I), J = static_cast<Eigen::Index>(s.dims.J),
             K = static_cast<Eigen::Index>(s.dims.K), R = static_cast<Eigen::Index>(s.rank);
  Vector x(R * (I + J + K));
  x.segment(0, R * I) = m.A().reshaped();
  x.segment(R * I, R * J) = m.B().reshaped();
  x.segment(R * (I + J), R * K) = m.C().reshaped();
  return ParamVector(s, std::move(x));
}

// Column r of A is x[(r)I, (r+1)I), of B is x[RI + rJ, RI + (r+1)J), of C is
// x[R(I+J) + rK, R(I+J) + (r+1)K)  (0-based, half-open).
inline CpModel unpack(const ParamVector& p) {
  const Shape& s = p.shape();
  const auto I = static_cast<Eigen::Index>(s.dims.I), J = static_cast<Eigen::Index>(s.dims.J),
             K = static_cast<Eigen::Index>(s.dims.K), R = static_cast<Eigen::Index>(s.rank);
  const Vector& x = p.data();
  Matrix A = x.segment(0, R * I).reshaped(I, R);
  Matrix B = x.segment(R * I, R * J).reshaped(J, R);
  Matrix C = x.segment(R * (I + J), R * K).reshaped(K, R);
  return CpModel(std::move(A), std::move(B), std::move(C));
}

inline ParamVector make_params(const Shape& s, Vector x) { return ParamVector(s, std::move(x)); }

// Sum of R outer products a_r o b_r o c_r. Accumulation runs over r in
// ascending order for every entry, so the result is deterministic.
inline DenseTensor3 cp_reconstruct(const CpModel& m, const Dims& dims) {
  if (m.dims() != dims)
    throw DomainError("cp_reconstruct: model factors are " + to_string(m.dims()) + ", requested " +
                      to_string(dims));
  DenseTensor3 out(dims);
  auto data = out.data();
  const Matrix& A = m.A();
  const Matrix& B = m.B();
  const Matrix& C = m.C();
  const std::size_t R = m.rank();
  for (std::size_t r = 0; r < R; ++r) {
    const double* a = A.col(static_cast<Eigen::Index>(r)).data();
    for (std::size_t k = 0; k < dims.K; ++k) {
      const double ck = C(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
      for (std::size_t j = 0; j < dims.J; ++j) {
        const double bc = B(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) * ck;
        double* dst = data.data() + dims.I * (j + dims.J * k);
        for (std::size_t i = 0; i < dims.I; ++i) dst[i] += a[i] * bc;
      }
    }
  }
  return out;
}

inline DenseTensor3 cp_reconstruct(const CpModel& m) { return cp_reconstruct(m, m.dims()); }

// F(x) = observed - model, flattened in storage order.
inline Vector residual(const CpModel& m, const DenseTensor3& observed) {
  if (m.dims() != observed.dims())
    throw DomainError("residual: model " + to_string(m.dims()) + " vs observed " +
                      to_string(observed.dims()));
  DenseTensor3 model = cp_reconstruct(m, observed.dims());
  auto obs = observed.data();
  auto mod = model.data();
  Vector f(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t n = 0; n < obs.size(); ++n) f[static_cast<Eigen::Index>(n)] = obs[n] - mod[n];
  return f;
}

inline Vector residual(const ParamVector& x, const DenseTensor3& observed) {
  if (x.shape().dims != observed.dims())
    throw DomainError("residual: parameter shape " + to_string(x.shape().dims) + " vs observed " +
                      to_string(observed.dims()));
  return residual(unpack(x), observed);
}

struct Compression {
  double percent = 0.0;  // 100 (1 - R(I+J+K) / IJK)
  long rounded = 0;      // nearest integer, halves away from zero
  bool degenerate = false;  // R(I+J+K) >= IJK; percent forced to 0
};

inline Compression compression_percent(std::size_t I, std::size_t J, std::size_t K, std::size_t R) {
  if (I == 0 || J == 0 || K == 0 || R == 0)
    throw DomainError("compression_percent: arguments must be positive");
  const double stored = static_cast<double>(R) * static_cast<double>(I + J + K);
  const double full = static_cast<double>(I) * static_cast<double>(J) * static_cast<double>(K);
  if (stored >= full) return {0.0, 0, true};
  const double pct = 100.0 * (1.0 - stored / full);
  return {pct, std::lround(pct), false};
}

inline Compression compression_percent(const Shape& s) {
  return compression_percent(s.dims.I, s.dims.J, s.dims.K, s.rank);
}

// Factor entries i.i.d. uniform on [lo, hi); one independent stream per
// factor matrix, each filled column by column. A model of rank R therefore
// shares its leading columns with every higher-rank model of the same seed.
inline CpModel random_model(const Dims& dims, std::size_t rank, std::uint64_t seed, double lo = 0.0,
                            double hi = 1.0) {
  if (rank < 1) throw DomainError("random_model: rank must be >= 1");
  auto fill = [&](std::size_t rows, std::uint64_t index) {
    auto stream = UniformStream::split(seed, index);
    Matrix M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rank));
    for (Eigen::Index r = 0; r < M.cols(); ++r)
      for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, r) = stream.next(lo, hi);
    return M;
  };
  return CpModel(fill(dims.I, 0), fill(dims.J, 1), fill(dims.K, 2));
}

inline DenseTensor3 random_tensor(const Dims& dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  DenseTensor3 t(dims);
  auto stream = UniformStream::split(seed, 3);
  for (double& v : t.data()) v = stream.next(lo, hi);
  return t;
}

// ---- CPD3 ------------------------------------------------------------------
// "CPD3", u32 I, J, K, R (little endian), then A, B, C column-major f64.

inline io::Bytes encode_cpd3(const CpModel& m) {
  io::Bytes out;
  const Shape s = m.shape();
  out.reserve(20 + 8 * s.params());
  io::put_magic(out, "CPD3");
  io::put_u32(out, static_cast<std::uint32_t>(s.dims.I));
  io::put_u32(out, static_cast<std::uint32_t>(s.dims.J));
  io::put_u32(out, static_cast<std::uint32_t>(s.dims.K));
  io::put_u32(out, static_cast<std::uint32_t>(s.rank));
  for (int mode = 0; mode < 3; ++mode)
    for (double v : m.factor(mode).reshaped()) io::put_f64(out, v);
  return out;
}

inline CpModel decode_cpd3(std::span<const unsigned char> bytes) {
  io::Reader in(bytes);
  in.expect_magic("CPD3");
  Shape s;
  s.dims.I = in.u32();
  s.dims.J = in.u32();
  s.dims.K = in.u32();
  s.rank = in.u32();
  if (s.dims.count() == 0 || s.rank == 0) throw FormatError("CPD3: zero extent or rank", in.offset());
  if (in.remaining() != 8 * s.params())
    throw FormatError("CPD3: payload holds " + std::to_string(in.remaining()) + " bytes, expected " +
                          std::to_string(8 * s.params()),
                      in.offset());
  auto read = [&](std::size_t rows) {
    Matrix M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(s.rank));
    for (double& v : M.reshaped()) {
      std::size_t at = in.offset();
      v = in.f64();
      if (!std::isfinite(v)) throw FormatError("CPD3: non-finite value", at);
    }
    return M;
  };
  Matrix A = read(s.dims.I);
  Matrix B = read(s.dims.J);
  Matrix C = read(s.dims.K);
  return CpModel(std::move(A), std::move(B), std::move(C));
}

inline void write_cpd3(const std::filesystem::path& path, const CpModel& m) {
  io::write_file_atomic(path, encode_cpd3(m));
}

inline CpModel read_cpd3(const std::filesystem::path& path) { return decode_cpd3(io::read_file(path)); }

}  // namespace cplm
