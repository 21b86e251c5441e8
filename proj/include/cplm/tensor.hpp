#pragma once

// Dense third-order tensors stored with the first index fastest, so that
// entry (i1, i2, i3) lives at flat position i1 + i2*I + i3*I*J (0-based).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cplm/binary_io.hpp"
#include "cplm/error.hpp"

namespace cplm {

struct Dims {
  std::size_t I = 0;
  std::size_t J = 0;
  std::size_t K = 0;

  std::size_t count() const noexcept { return I * J * K; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.I) + "x" + std::to_string(d.J) + "x" + std::to_string(d.K);
}

// 1-based linearization used throughout the math-facing API:
// alpha(i1, i2, i3) = i1 + (i2 - 1) I + (i3 - 1) I J.
inline std::size_t linear_index(std::size_t i1, std::size_t i2, std::size_t i3,
                                std::size_t I, std::size_t J) {
  if (i1 < 1 || i1 > I)
    throw DomainError("linear_index: mode-1 index " + std::to_string(i1) + " outside [1, " +
                      std::to_string(I) + "]");
  if (i2 < 1 || i2 > J)
    throw DomainError("linear_index: mode-2 index " + std::to_string(i2) + " outside [1, " +
                      std::to_string(J) + "]");
  if (i3 < 1) throw DomainError("linear_index: mode-3 index must be >= 1");
  return i1 + (i2 - 1) * I + (i3 - 1) * I * J;
}

class DenseTensor3 {
 public:
  DenseTensor3() = default;

  explicit DenseTensor3(Dims dims) : dims_(check_dims(dims)), data_(dims.count(), 0.0) {}

  DenseTensor3(Dims dims, std::vector<double> data) : dims_(check_dims(dims)), data_(std::move(data)) {
    if (data_.size() != dims_.count())
      throw DomainError("DenseTensor3: data length " + std::to_string(data_.size()) +
                        " does not match " + to_string(dims_));
    for (std::size_t n = 0; n < data_.size(); ++n)
      if (!std::isfinite(data_[n]))
        throw DomainError("DenseTensor3: non-finite value at flat index " + std::to_string(n));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  // 0-based element access.
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[i + dims_.I * (j + dims_.J * k)];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[i + dims_.I * (j + dims_.J * k)];
  }

  // 1-based access through linear_index, bounds-checked on every axis.
  double at(std::size_t i1, std::size_t i2, std::size_t i3) const {
    if (i3 > dims_.K)
      throw DomainError("DenseTensor3::at: mode-3 index " + std::to_string(i3) + " outside [1, " +
                        std::to_string(dims_.K) + "]");
    return data_[linear_index(i1, i2, i3, dims_.I, dims_.J) - 1];
  }

  friend bool operator==(const DenseTensor3&, const DenseTensor3&) = default;

 private:
  static Dims check_dims(Dims d) {
    if (d.I == 0 || d.J == 0 || d.K == 0)
      throw DomainError("DenseTensor3: extents must be positive, got " + to_string(d));
    return d;
  }

  Dims dims_{};
  std::vector<double> data_;
};

inline double frobenius_norm(const DenseTensor3& t) {
  double sum = 0.0;
  for (double v : t.data()) sum += v * v;
  return std::sqrt(sum);
}

inline DenseTensor3 sub(const DenseTensor3& a, const DenseTensor3& b) {
  if (a.dims() != b.dims())
    throw DomainError("sub: shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  DenseTensor3 out(a.dims());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  for (std::size_t n = 0; n < z.size(); ++n) z[n] = x[n] - y[n];
  return out;
}

// ---- TNS3 ------------------------------------------------------------------
// "TNS3", u32 I, J, K (little endian), then I*J*K f64 in storage order.

inline io::Bytes encode_tns3(const DenseTensor3& t) {
  io::Bytes out;
  out.reserve(16 + 8 * t.size());
  io::put_magic(out, "TNS3");
  io::put_u32(out, static_cast<std::uint32_t>(t.dims().I));
  io::put_u32(out, static_cast<std::uint32_t>(t.dims().J));
  io::put_u32(out, static_cast<std::uint32_t>(t.dims().K));
  for (double v : t.data()) io::put_f64(out, v);
  return out;
}

inline DenseTensor3 decode_tns3(std::span<const unsigned char> bytes) {
  io::Reader in(bytes);
  in.expect_magic("TNS3");
  Dims d;
  d.I = in.u32();
  d.J = in.u32();
  d.K = in.u32();
  if (d.count() == 0) throw FormatError("TNS3: zero extent", in.offset());
  if (in.remaining() != 8 * d.count())
    throw FormatError("TNS3: payload holds " + std::to_string(in.remaining()) + " bytes, expected " +
                          std::to_string(8 * d.count()),
                      in.offset());
  std::vector<double> data(d.count());
  for (auto& v : data) {
    std::size_t at = in.offset();
    v = in.f64();
    if (!std::isfinite(v)) throw FormatError("TNS3: non-finite value", at);
  }
  return DenseTensor3(d, std::move(data));
}

inline void write_tns3(const std::filesystem::path& path, const DenseTensor3& t) {
  io::write_file_atomic(path, encode_tns3(t));
}

inline DenseTensor3 read_tns3(const std::filesystem::path& path) {
  return decode_tns3(io::read_file(path));
}

}  // namespace cplm
