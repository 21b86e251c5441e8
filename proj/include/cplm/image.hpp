#pragma once

// 8-bit RGB images and their I x J x 3 tensor form (rows, columns, channel).
// Binary PPM (P6) I/O lives here; PNG is in png_io.hpp.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cplm/binary_io.hpp"
#include "cplm/error.hpp"
#include "cplm/tensor.hpp"

namespace cplm {

enum class PixelScale { unit, byte };

inline std::string_view to_string(PixelScale s) { return s == PixelScale::unit ? "unit" : "byte"; }

class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height)
      : width_(width), height_(height), pixels_(3 * width * height, 0) {
    if (width == 0 || height == 0) throw DomainError("RgbImage: extents must be positive");
  }
  RgbImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width == 0 || height == 0) throw DomainError("RgbImage: extents must be positive");
    if (pixels_.size() != 3 * width * height)
      throw DomainError("RgbImage: pixel buffer holds " + std::to_string(pixels_.size()) + " samples, expected " +
                        std::to_string(3 * width * height));
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }

  // Row-major, channel-interleaved.
  std::uint8_t operator()(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return pixels_[3 * (row * width_ + col) + ch];
  }
  std::uint8_t& operator()(std::size_t row, std::size_t col, std::size_t ch) noexcept {
    return pixels_[3 * (row * width_ + col) + ch];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t width_ = 0, height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

inline double pixel_scale_max(PixelScale s) { return s == PixelScale::unit ? 1.0 : 255.0; }

inline DenseTensor3 image_to_tensor(const RgbImage& img, PixelScale scale = PixelScale::unit) {
  DenseTensor3 t({img.height(), img.width(), 3});
  const double div = scale == PixelScale::unit ? 255.0 : 1.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t col = 0; col < img.width(); ++col)
      for (std::size_t row = 0; row < img.height(); ++row) t(row, col, c) = img(row, col, c) / div;
  return t;
}

// Clamp to the scale's range, convert to [0, 255], round half away from zero.
inline std::uint8_t quantize(double v, PixelScale scale) {
  const double hi = pixel_scale_max(scale);
  double c = std::clamp(v, 0.0, hi);
  if (std::isnan(v)) c = 0.0;
  const double bytes = scale == PixelScale::unit ? c * 255.0 : c;
  return static_cast<std::uint8_t>(std::min(255.0, std::round(bytes)));
}

inline RgbImage tensor_to_image(const DenseTensor3& t, PixelScale scale = PixelScale::unit) {
  if (t.dims().K != 3)
    throw DomainError("tensor_to_image: third extent must be 3, got " + std::to_string(t.dims().K));
  RgbImage img(t.dims().J, t.dims().I);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t col = 0; col < img.width(); ++col)
      for (std::size_t row = 0; row < img.height(); ++row) img(row, col, c) = quantize(t(row, col, c), scale);
  return img;
}

inline constexpr double kPsnrCap = 99.0;

// 10 log10(255^2 / MSE); +infinity for identical images.
inline double psnr(const RgbImage& a, const RgbImage& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw DomainError("psnr: image sizes differ");
  double sse = 0.0;
  for (std::size_t n = 0; n < a.pixels().size(); ++n) {
    const double d = static_cast<double>(a.pixels()[n]) - static_cast<double>(b.pixels()[n]);
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(a.pixels().size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// PSNR as reported in tables: infinity capped at 99 dB.
inline double psnr_capped(const RgbImage& a, const RgbImage& b) { return std::min(psnr(a, b), kPsnrCap); }

// ---- PPM (P6, maxval 255) --------------------------------------------------

inline io::Bytes encode_ppm(const RgbImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  io::Bytes out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

inline RgbImage decode_ppm(std::span<const unsigned char> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError("PPM: header value too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError("PPM: expected a number", start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("PPM: expected P6 magic", 0);
  pos = 2;
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw FormatError("PPM: only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PPM: missing header terminator", pos);
  ++pos;
  if (w == 0 || h == 0) throw FormatError("PPM: zero extent", pos);
  if (bytes.size() - pos != 3 * w * h)
    throw FormatError("PPM: pixel payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(3 * w * h),
                      pos);
  return RgbImage(w, h, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()));
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  io::write_file_atomic(path, encode_ppm(img));
}

inline RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(io::read_file(path)); }

}  // namespace cplm
