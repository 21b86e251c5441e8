#pragma once

// PNG read/write through libpng's simplified API. Requires linking libpng.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cplm/binary_io.hpp"
#include "cplm/error.hpp"
#include "cplm/image.hpp"

namespace cplm {

struct PngDecodeResult {
  RgbImage image;
  bool alpha_stripped = false;
};

inline PngDecodeResult decode_png(std::span<const unsigned char> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw FormatError(std::string("PNG: ") + img.message, 0);
  const bool had_alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> rgba(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("PNG: " + msg, 0);
  }
  std::vector<std::uint8_t> rgb(3 * static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t p = 0, n = static_cast<std::size_t>(img.width) * img.height; p < n; ++p)
    for (int c = 0; c < 3; ++c) rgb[3 * p + c] = rgba[4 * p + c];
  return {RgbImage(img.width, img.height, std::move(rgb)), had_alpha};
}

inline io::Bytes encode_png(const RgbImage& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels().data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + img.message);
  io::Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels().data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + img.message);
  out.resize(size);
  return out;
}

inline PngDecodeResult read_png(const std::filesystem::path& path) { return decode_png(io::read_file(path)); }

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  io::write_file_atomic(path, encode_png(img));
}

inline bool has_extension(const std::filesystem::path& p, std::string_view ext) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e == ext;
}

// Dispatches on extension: .png, otherwise PPM.
inline PngDecodeResult read_image(const std::filesystem::path& path) {
  if (has_extension(path, ".png")) return read_png(path);
  return {read_ppm(path), false};
}

inline void write_image(const std::filesystem::path& path, const RgbImage& img) {
  if (has_extension(path, ".png"))
    write_png(path, img);
  else
    write_ppm(path, img);
}

}  // namespace cplm
