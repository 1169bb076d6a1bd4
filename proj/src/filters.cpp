#include "oat/filters.hpp"

#include "oat/errors.hpp"
#include "oat/parallel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

namespace oat {

using cplx = std::complex<double>;

std::complex<double> BiquadCascade::response(double f) const {
  const cplx zi = std::polar(1.0, -2.0 * std::numbers::pi * f / fs); // z^-1
  cplx h = 1.0;
  for (const auto &s : sections)
    h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  return h;
}

double BiquadCascade::magnitude_db(double f) const { return 20.0 * std::log10(std::abs(response(f))); }

std::vector<std::complex<double>> BiquadCascade::poles() const {
  std::vector<cplx> out;
  for (const auto &s : sections) {
    const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

BiquadCascade design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs) {
  if (order < 2 || order % 2 != 0)
    throw InvalidArgument("butterworth order must be even and >= 2");
  if (!(fs > 0.0) || !(f_lo > 0.0) || !(f_lo < f_hi) || !(f_hi < 0.5 * fs))
    throw InvalidArgument("band edges must satisfy 0 < f_lo < f_hi < fs/2");

  const double pi = std::numbers::pi;
  const double two_fs = 2.0 * fs;
  const double wl = two_fs * std::tan(pi * f_lo / fs);
  const double wh = two_fs * std::tan(pi * f_hi / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  std::vector<cplx> zpoles;
  for (int m = 0; m < order; ++m) {
    const cplx p = std::polar(1.0, pi * (2.0 * m + order + 1.0) / (2.0 * order));
    const cplx half = p * (bw / 2.0);
    const cplx root = std::sqrt(half * half - w0sq);
    for (const cplx s : {half + root, half - root}) {
      const cplx z = (1.0 + s / two_fs) / (1.0 - s / two_fs);
      if (z.imag() > 0.0)
        zpoles.push_back(z);
    }
  }
  if (static_cast<int>(zpoles.size()) != order)
    throw InvalidArgument("band too wide for a complex-pole band-pass design");
  std::sort(zpoles.begin(), zpoles.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });

  BiquadCascade c;
  c.fs = fs;
  c.f_lo = f_lo;
  c.f_hi = f_hi;
  const double w_center = 2.0 * std::atan(std::sqrt(w0sq) / two_fs);
  const cplx zi = std::polar(1.0, -w_center);
  for (const cplx z : zpoles) {
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    // Zeros at z = 1 and z = -1; scale for unit magnitude at the band center.
    const cplx h = (1.0 - zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    const double g = 1.0 / std::abs(h);
    s.b0 = g;
    s.b1 = 0.0;
    s.b2 = -g;
    c.sections.push_back(s);
  }
  return c;
}

void filter_causal(const BiquadCascade &c, std::span<const double> in, std::span<double> out) {
  if (in.size() != out.size())
    throw InvalidArgument("filter: input and output sizes differ");
  if (in.data() != out.data())
    std::copy(in.begin(), in.end(), out.begin());
  for (const auto &s : c.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double &v : out) {
      const double x = v;
      const double y = s.b0 * x + z1;
      z1 = s.b1 * x - s.a1 * y + z2;
      z2 = s.b2 * x - s.a2 * y;
      v = y;
    }
  }
}

namespace {

void forward_backward(const BiquadCascade &c, std::span<double> buf) {
  filter_causal(c, buf, buf);
  std::reverse(buf.begin(), buf.end());
  filter_causal(c, buf, buf);
  std::reverse(buf.begin(), buf.end());
}

} // namespace

std::vector<double> apply_zero_phase(const BiquadCascade &c, std::span<const double> signal,
                                     bool strict) {
  if (signal.empty())
    throw InvalidArgument("zero-phase filter: empty signal");
  if (strict) {
    std::vector<double> buf(signal.begin(), signal.end());
    forward_backward(c, buf);
    return buf;
  }

  const auto n = signal.size();
  const auto pad = static_cast<std::size_t>(3 * c.total_order());
  if (n < static_cast<std::size_t>(4 * c.total_order()) || n <= pad)
    throw InvalidArgument("zero-phase filter: signal of length " + std::to_string(n) +
                          " too short for the padded path");
  std::vector<double> buf(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    buf[i] = 2.0 * signal[0] - signal[pad - i];
    buf[pad + n + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];
  }
  std::copy(signal.begin(), signal.end(), buf.begin() + static_cast<std::ptrdiff_t>(pad));
  forward_backward(c, buf);
  return {buf.begin() + static_cast<std::ptrdiff_t>(pad),
          buf.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

BandFilterBank make_filter_bank(const BandSpec &spec, double fs, FilterPath path) {
  spec.validate(fs);
  BandFilterBank bank;
  bank.spec = spec;
  bank.fs = fs;
  bank.path = path;
  for (int k = 0; k < spec.count(); ++k)
    bank.bands.push_back(design_butterworth_bandpass(spec.order, spec.lo(k), spec.hi(k), fs));
  return bank;
}

void BandFilterBank::apply(int k, FilterVariant variant, int n_d, int n_t,
                           std::span<const double> in, std::span<double> out) const {
  if (k < 0 || k >= count())
    throw InvalidArgument("band index " + std::to_string(k) + " out of range");
  const auto total = static_cast<std::size_t>(n_d) * static_cast<std::size_t>(n_t);
  if (in.size() != total || out.size() != total)
    throw InvalidArgument("band filter: shape mismatch");
  const bool strict = path == FilterPath::strict;
  parallel_for(n_d, [&](std::ptrdiff_t l) {
    const auto off = static_cast<std::size_t>(l) * n_t;
    const auto ch = in.subspan(off, n_t);
    const auto y = apply_zero_phase(bands[k], ch, strict);
    for (int i = 0; i < n_t; ++i)
      out[off + i] = variant == FilterVariant::pass ? y[i] : ch[i] - y[i];
  });
}

Sinogram band_pass_sinogram(const BandFilterBank &bank, int k, const Sinogram &s) {
  Sinogram out(s.n_d, s.n_t, s.dt, s.t0);
  bank.apply(k, FilterVariant::pass, s.n_d, s.n_t, s.data, out.data);
  return out;
}

Sinogram band_reject_sinogram(const BandFilterBank &bank, int k, const Sinogram &s) {
  Sinogram out(s.n_d, s.n_t, s.dt, s.t0);
  bank.apply(k, FilterVariant::reject, s.n_d, s.n_t, s.data, out.data);
  return out;
}

Eigen::MatrixXd materialize_filter_matrix(const BandFilterBank &bank, int k, int n_t,
                                          FilterVariant variant) {
  if (bank.path != FilterPath::strict)
    throw UnsupportedMode("filter matrices exist only for the strict (unpadded) path");
  if (k < 0 || k >= bank.count())
    throw InvalidArgument("band index " + std::to_string(k) + " out of range");
  if (n_t < 1)
    throw InvalidArgument("n_t must be >= 1");
  Eigen::MatrixXd m(n_t, n_t);
  parallel_for(n_t, [&](std::ptrdiff_t j) {
    std::vector<double> e(n_t, 0.0);
    e[j] = 1.0;
    const auto y = apply_zero_phase(bank.bands[k], e, true);
    for (int i = 0; i < n_t; ++i)
      m(i, j) = variant == FilterVariant::pass ? y[i] : e[i] - y[i];
  });
  return m;
}

PowerSpectrum mean_power_spectrum(const Sinogram &s) {
  if (s.n_t < 2)
    throw InvalidArgument("power spectrum needs n_t >= 2");
  const int n = s.n_t;
  const int bins = n / 2 + 1;
  PowerSpectrum ps;
  ps.frequency.resize(bins);
  ps.power.assign(bins, 0.0);
  ps.n_t = n;
  for (int m = 0; m < bins; ++m)
    ps.frequency[m] = m * s.fs() / n;

  struct FftwFree {
    void operator()(void *p) const { fftw_free(p); }
  };
  std::unique_ptr<double, FftwFree> in(static_cast<double *>(fftw_malloc(sizeof(double) * n)));
  std::unique_ptr<fftw_complex, FftwFree> out(
      static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * bins)));
  fftw_plan plan = fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
  for (int l = 0; l < s.n_d; ++l) {
    const auto ch = s.channel(l);
    std::copy(ch.begin(), ch.end(), in.get());
    fftw_execute(plan);
    for (int m = 0; m < bins; ++m) {
      const double re = out.get()[m][0], im = out.get()[m][1];
      ps.power[m] += (re * re + im * im) / n;
    }
  }
  fftw_destroy_plan(plan);
  for (auto &p : ps.power)
    p /= s.n_d;
  return ps;
}

double band_energy_fraction(const PowerSpectrum &ps, double f_lo, double f_hi) {
  const std::size_t bins = ps.power.size();
  // Two-sided weights: DC and (for even lengths) Nyquist appear once.
  const bool even = ps.n_t % 2 == 0;
  double total = 0.0, inside = 0.0;
  for (std::size_t m = 0; m < bins; ++m) {
    const bool single = m == 0 || (even && m == bins - 1);
    const double w = single ? 1.0 : 2.0;
    total += w * ps.power[m];
    if (ps.frequency[m] >= f_lo && ps.frequency[m] <= f_hi)
      inside += w * ps.power[m];
  }
  return total > 0.0 ? inside / total : 0.0;
}

} // namespace oat
