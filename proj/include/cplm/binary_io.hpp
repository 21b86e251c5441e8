#pragma once

// Little-endian primitives and atomic file replacement shared by the TNS3
// and CPD3 formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cplm/error.hpp"

namespace cplm::io {

using Bytes = std::vector<unsigned char>;

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(v >> s));
}

inline void put_f64(Bytes& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<unsigned char>(bits >> s));
}

inline void put_magic(Bytes& out, std::string_view magic) {
  out.insert(out.end(), magic.begin(), magic.end());
}

// Sequential reader over an in-memory buffer; every failure reports the
// offset at which it occurred.
class Reader {
 public:
  explicit Reader(std::span<const unsigned char> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "truncated magic");
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError("bad magic, expected '" + std::string(magic) + "'", pos_);
    pos_ += magic.size();
  }

  std::uint32_t u32() {
    need(4, "truncated u32");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{data_[pos_ + b]} << (8 * b);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8, "truncated f64");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t{data_[pos_ + b]} << (8 * b);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("trailing bytes", pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(what, pos_);
  }

  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return data;
}

// Writes to a sibling temp file and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failure on '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto '" + path.string() + "'");
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

}  // namespace cplm::io
