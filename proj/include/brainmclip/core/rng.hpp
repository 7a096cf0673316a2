#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/**
 * Counter-based generator: draw k is a pure hash of (key, k), so a stream is
 * fully determined by its seed and labels. Distribution transforms are
 * implemented here rather than through <random> so results do not depend on
 * the standard library vendor.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  /// Independent stream keyed by (this stream's key, label); does not advance this stream.
  Rng child(std::string_view label) const { return Rng(key_, detail::fnv1a(label)); }
  Rng child(std::uint64_t index) const { return Rng(key_, detail::mix64(index) ^ 0x243f6a8885a308d3ULL); }

  std::uint64_t next_u64() {
    const std::uint64_t c = counter_++;
    return detail::mix64(detail::mix64(key_ ^ (c * 0xd1b54a32d192ed03ULL)) + c);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift; the bias is < n / 2^64 and irrelevant at these sizes.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (cosine half only, two uniforms per draw).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = stddev * normal();
    return m;
  }

  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = uniform(lo, hi);
    return m;
  }

 private:
  Rng(std::uint64_t parent_key, std::uint64_t label_hash)
      : key_(detail::mix64(parent_key ^ detail::mix64(label_hash))) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace brainmclip
