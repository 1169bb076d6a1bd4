#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace oat {

/// SplitMix64 generator. Streams are portable: uniform() uses the top 53 bits,
/// normal() is Box-Muller without caching the second variate.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next() % n; }

  double normal() noexcept {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::uint64_t state_;
};

/// Stream tags used when splitting a master seed.
enum class SeedStream : std::uint64_t {
  phantom = 1,
  perturbation = 2,
  noise = 3,
  snr = 4,
  shuffle = 5,
  init = 6,
};

/// Per-record seed: SplitMix64 finalizer chained over (master, index, tag).
inline std::uint64_t hash64(std::uint64_t master, std::uint64_t index, SeedStream tag) noexcept {
  SplitMix64 a(master);
  SplitMix64 b(a.next() ^ index);
  SplitMix64 c(b.next() ^ static_cast<std::uint64_t>(tag));
  return c.next();
}

} // namespace oat
