#pragma once

#include "oat/core.hpp"

#include <Eigen/Core>

#include <complex>
#include <span>
#include <vector>

namespace oat {

/// One second-order section, a0 normalized to 1:
///   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  double fs = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;

  /// H(e^{j 2 pi f / fs}).
  std::complex<double> response(double f) const;
  double magnitude_db(double f) const;
  std::vector<std::complex<double>> poles() const;
  /// Number of poles (twice the prototype order for a band-pass).
  int total_order() const noexcept { return 2 * static_cast<int>(sections.size()); }
};

/// Butterworth band-pass of the given prototype order: analog low-pass
/// prototype, low-pass to band-pass transform, then the bilinear transform
/// with both edges prewarped. The cascade has `order` sections, unit gain at
/// the (prewarped) geometric center and -3.0103 dB at f_lo and f_hi.
BiquadCascade design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs);

/// Causal filtering with zero initial conditions (direct form II transposed).
void filter_causal(const BiquadCascade &c, std::span<const double> in, std::span<double> out);

/// Forward-backward filtering. strict = true is the exact linear operator
/// J H J H (zero initial conditions, no padding), which is symmetric positive
/// semidefinite. strict = false first odd-reflects 3 * total_order samples at
/// each end and trims them afterwards.
std::vector<double> apply_zero_phase(const BiquadCascade &c, std::span<const double> signal,
                                     bool strict);

enum class FilterPath { strict, padded };
enum class FilterVariant { pass, reject };

/// Band-pass filters P_k for each configured band and the complementary
/// band-reject operators F_k = I - P_k. Band indices are 0-based.
struct BandFilterBank {
  BandSpec spec;
  double fs = 0.0;
  FilterPath path = FilterPath::strict;
  std::vector<BiquadCascade> bands;

  int count() const noexcept { return static_cast<int>(bands.size()); }

  /// Channel-wise P_k (or F_k) on a raw n_d x n_t buffer using `path`.
  void apply(int k, FilterVariant variant, int n_d, int n_t, std::span<const double> in,
             std::span<double> out) const;
};

BandFilterBank make_filter_bank(const BandSpec &spec, double fs,
                                FilterPath path = FilterPath::strict);

Sinogram band_pass_sinogram(const BandFilterBank &bank, int k, const Sinogram &s);
Sinogram band_reject_sinogram(const BandFilterBank &bank, int k, const Sinogram &s);

/// Dense n_t x n_t matrix of the strict P_k or F_k; column j is the operator
/// applied to the unit impulse at j. Throws UnsupportedMode on a padded bank.
Eigen::MatrixXd materialize_filter_matrix(const BandFilterBank &bank, int k, int n_t,
                                          FilterVariant variant);

struct PowerSpectrum {
  std::vector<double> frequency; // Hz, n_t/2 + 1 bins
  std::vector<double> power;     // mean over channels of |X_m|^2 / n_t
  int n_t = 0;
};

/// One-sided periodogram averaged over channels. With this scaling
/// P_0 + 2 sum_{0<m<n_t/2} P_m (+ P_{n_t/2} for even n_t) is the mean channel
/// energy sum_k x_k^2.
PowerSpectrum mean_power_spectrum(const Sinogram &s);

/// Fraction of the spectrum's (two-sided) energy inside [f_lo, f_hi].
double band_energy_fraction(const PowerSpectrum &ps, double f_lo, double f_hi);

} // namespace oat
