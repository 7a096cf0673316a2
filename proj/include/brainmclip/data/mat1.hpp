#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

/*
 * MAT1 layout (little-endian):
 *   0..3   magic "BMC1"
 *   4      version (1)
 *   5      dtype (1 = real64)
 *   6..7   zero
 *   8..15  rows (u64)
 *   16..23 cols (u64)
 *   24..   rows*cols real64 values, row-major
 */
namespace mat1 {

inline constexpr std::array<unsigned char, 4> kMagic{'B', 'M', 'C', '1'};
inline constexpr unsigned char kVersion = 1;
inline constexpr unsigned char kDtypeReal64 = 1;
inline constexpr std::size_t kHeaderSize = 24;

inline void put_u64(unsigned char* p, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) p[b] = static_cast<unsigned char>(v >> (8 * b));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

}  // namespace mat1

inline std::vector<unsigned char> encode_mat1(const Matrix& m) {
  if (m.empty()) throw ShapeMismatch("encode_mat1: empty matrix");
  std::vector<unsigned char> out(mat1::kHeaderSize + 8 * m.size(), 0);
  std::copy(mat1::kMagic.begin(), mat1::kMagic.end(), out.begin());
  out[4] = mat1::kVersion;
  out[5] = mat1::kDtypeReal64;
  mat1::put_u64(out.data() + 8, m.rows());
  mat1::put_u64(out.data() + 16, m.cols());
  std::size_t off = mat1::kHeaderSize;
  for (double v : m.values()) {
    mat1::put_u64(out.data() + off, std::bit_cast<std::uint64_t>(v));
    off += 8;
  }
  return out;
}

inline Matrix decode_mat1(const std::vector<unsigned char>& bytes) {
  const std::size_t n = bytes.size();
  for (std::size_t k = 0; k < mat1::kMagic.size(); ++k) {
    if (k >= n) throw FormatError("MAT1: truncated magic", n);
    if (bytes[k] != mat1::kMagic[k]) throw FormatError("MAT1: bad magic", 0);
  }
  if (n < 5) throw FormatError("MAT1: truncated header", n);
  if (bytes[4] != mat1::kVersion) throw FormatError("MAT1: unsupported version " + std::to_string(bytes[4]), 4);
  if (n < 6) throw FormatError("MAT1: truncated header", n);
  if (bytes[5] != mat1::kDtypeReal64) throw FormatError("MAT1: unsupported dtype " + std::to_string(bytes[5]), 5);
  if (n < mat1::kHeaderSize) throw FormatError("MAT1: truncated header", n);
  if (bytes[6] != 0) throw FormatError("MAT1: reserved byte not zero", 6);
  if (bytes[7] != 0) throw FormatError("MAT1: reserved byte not zero", 7);
  const std::uint64_t rows = mat1::get_u64(bytes.data() + 8);
  const std::uint64_t cols = mat1::get_u64(bytes.data() + 16);
  if (rows == 0) throw FormatError("MAT1: zero rows", 8);
  if (cols == 0) throw FormatError("MAT1: zero cols", 16);
  const std::uint64_t payload = n - mat1::kHeaderSize;
  if (rows > payload / 8 || cols > payload / 8 / rows) throw FormatError("MAT1: truncated data", n);
  const std::uint64_t count = rows * cols;
  if (payload != count * 8) {
    throw FormatError(payload < count * 8 ? "MAT1: truncated data" : "MAT1: trailing bytes",
                      payload < count * 8 ? n : mat1::kHeaderSize + count * 8);
  }
  std::vector<double> data(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t off = mat1::kHeaderSize + 8 * k;
    const double v = std::bit_cast<double>(mat1::get_u64(bytes.data() + off));
    if (!std::isfinite(v)) throw FormatError("MAT1: non-finite value", off);
    data[k] = v;
  }
  return Matrix(rows, cols, std::move(data));
}

inline void save_matrix(const Matrix& m, const std::filesystem::path& path) {
  const auto bytes = encode_mat1(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw UsageError("write failed: " + path.string());
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_mat1(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace brainmclip
