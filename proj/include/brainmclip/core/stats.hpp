#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw DegenerateInput("pearson: need n >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, qx = 0.0, qy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = x[k] - mx, dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
    qx += x[k] * x[k];
    qy += y[k] * y[k];
  }
  // Rounding in the mean leaves ~1e-32 relative residue on constant input.
  if (sxx <= 1e-26 * qx || syy <= 1e-26 * qy) throw DegenerateInput("pearson: zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Fractional ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("spearman: length mismatch");
  if (x.size() < 2) throw DegenerateInput("spearman: need n >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = norm2(u), nv = norm2(v);
  if (nu <= 0.0 || nv <= 0.0) throw DegenerateInput("cosine: zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

}  // namespace brainmclip
