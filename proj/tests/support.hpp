#pragma once

#include "oat/config.hpp"
#include "oat/core.hpp"
#include "oat/forward.hpp"
#include "oat/rng.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace oat::testing {

/// Desk geometry shrunk to an n x n grid at 200 um pitch.
inline ExperimentConfig desk(int n = 32) {
  ExperimentConfig cfg = desk_config();
  cfg.grid = ImagingGrid::centered(n, n, 200e-6);
  return cfg;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (auto &x : v)
    x = rng.uniform(lo, hi);
  return v;
}

inline double dot(const std::vector<double> &a, const std::vector<double> &b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2(const std::vector<double> &a) { return std::sqrt(dot(a, a)); }

inline double rel_diff(const std::vector<double> &a, const std::vector<double> &b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Smooth blob phantom with values in [0, 1].
inline Image blob_phantom(const ImagingGrid &g) {
  Image img(g);
  const double half = 0.5 * g.nx() * g.dx();
  const Vec2 c = pixel_center(g, (g.ny() / 2) * g.nx() + g.nx() / 2);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const Vec2 r = pixel_center(g, j);
    const Vec2 a = r - (c + Vec2{-0.3 * half, 0.2 * half});
    const Vec2 b = r - (c + Vec2{0.35 * half, -0.25 * half});
    img[j] = std::exp(-(a.x * a.x + a.y * a.y) / std::pow(0.25 * half, 2)) +
             0.7 * std::exp(-(b.x * b.x + b.y * b.y) / std::pow(0.08 * half, 2));
  }
  return img;
}

} // namespace oat::testing
