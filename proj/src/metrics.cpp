#include "oat/metrics.hpp"

#include "oat/errors.hpp"
#include "oat/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <limits>

namespace oat {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const Image &a, const Image &b) {
  if (a.grid.nx() != b.grid.nx() || a.grid.ny() != b.grid.ny() || a.size() != b.size())
    throw InvalidArgument("metric: image shapes differ");
  if (a.size() == 0)
    throw InvalidArgument("metric: empty image");
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double &v : w)
    v /= sum;
  return w;
}

/// Separable valid-region filtering of an nx x ny field.
std::vector<double> filter_valid(const std::vector<double> &f, int nx, int ny,
                                 const std::array<double, kWindow> &w) {
  const int ox = nx - kWindow + 1, oy = ny - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(ny) * ox);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < ox; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i)
        acc += w[i] * f[static_cast<std::size_t>(y) * nx + x + i];
      rows[static_cast<std::size_t>(y) * ox + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oy) * ox);
  for (int y = 0; y < oy; ++y)
    for (int x = 0; x < ox; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i)
        acc += w[i] * rows[static_cast<std::size_t>(y + i) * ox + x];
      out[static_cast<std::size_t>(y) * ox + x] = acc;
    }
  return out;
}

MetricSummary summarize(const std::vector<double> &v) {
  MetricSummary s;
  if (v.empty())
    return s;
  for (double x : v)
    s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v)
      ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

} // namespace

double rmse(const Image &pred, const Image &truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double d = pred[j] - truth[j];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double psnr(const Image &pred, const Image &truth) {
  const double e = rmse(pred, truth);
  if (e == 0.0)
    return std::numeric_limits<double>::infinity();
  return -20.0 * std::log10(e);
}

double pearson(const Image &pred, const Image &truth) {
  check_pair(pred, truth);
  const auto n = static_cast<double>(pred.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    ma += pred[j];
    mb += truth[j];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double a = pred[j] - ma, b = truth[j] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw UndefinedCorrelation("pearson correlation of a constant image");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double ssim(const Image &pred, const Image &truth) {
  check_pair(pred, truth);
  const int nx = pred.grid.nx(), ny = pred.grid.ny();
  if (nx < kWindow || ny < kWindow)
    throw InvalidArgument("ssim needs images of at least 11x11 pixels");
  static const auto w = gaussian_taps();
  std::vector<double> xx(pred.size()), yy(pred.size()), xy(pred.size());
  for (std::size_t j = 0; j < pred.size(); ++j) {
    xx[j] = pred[j] * pred[j];
    yy[j] = truth[j] * truth[j];
    xy[j] = pred[j] * truth[j];
  }
  const auto mx = filter_valid(pred.data, nx, ny, w);
  const auto my = filter_valid(truth.data, nx, ny, w);
  const auto exx = filter_valid(xx, nx, ny, w);
  const auto eyy = filter_valid(yy, nx, ny, w);
  const auto exy = filter_valid(xy, nx, ny, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * sxy + kC2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (sxx + syy + kC2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

Image normalize_minmax(const Image &img) {
  Image out(img.grid);
  if (img.size() == 0)
    return out;
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  const double span = *hi - *lo;
  if (span > 0.0)
    for (std::size_t j = 0; j < img.size(); ++j)
      out[j] = (img[j] - *lo) / span;
  return out;
}

MetricReport evaluate_suite(const std::vector<Image> &preds, const std::vector<Image> &truths,
                            const std::string &label, bool normalize_predictions) {
  if (preds.size() != truths.size())
    throw InvalidArgument("evaluate_suite: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(truths.size()) + " truths");
  if (preds.empty())
    throw InvalidArgument("evaluate_suite: no images");
  for (std::size_t i = 0; i < preds.size(); ++i)
    check_pair(preds[i], truths[i]);

  MetricReport rep;
  rep.label = label;
  rep.per_image.resize(preds.size());
  std::vector<std::exception_ptr> errors(preds.size());
  parallel_for(static_cast<std::ptrdiff_t>(preds.size()), [&](std::ptrdiff_t i) {
    try {
      const Image p = normalize_predictions ? normalize_minmax(preds[i]) : preds[i];
      auto &m = rep.per_image[i];
      m.rmse = rmse(p, truths[i]);
      m.psnr = psnr(p, truths[i]);
      m.pc = pearson(p, truths[i]);
      m.ssim = ssim(p, truths[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);

  std::vector<double> s, c, r, p;
  for (const auto &m : rep.per_image) {
    s.push_back(m.ssim);
    c.push_back(m.pc);
    r.push_back(m.rmse);
    if (std::isfinite(m.psnr))
      p.push_back(m.psnr);
    else
      ++rep.psnr_inf_count;
  }
  rep.ssim = summarize(s);
  rep.pc = summarize(c);
  rep.rmse = summarize(r);
  rep.psnr = summarize(p);
  if (p.empty())
    rep.psnr.mean = std::numeric_limits<double>::infinity();
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  auto summary = [](const MetricSummary &s) {
    return nlohmann::json{{"mean", finite_or_null(s.mean)}, {"std", s.std}};
  };
  nlohmann::json per = nlohmann::json::array();
  for (const auto &m : per_image)
    per.push_back({{"ssim", m.ssim}, {"pc", m.pc}, {"rmse", m.rmse}, {"psnr", finite_or_null(m.psnr)}});
  nlohmann::json psnr_j = summary(psnr);
  psnr_j["inf_count"] = psnr_inf_count;
  return {{"label", label},
          {"n", n()},
          {"metrics", {{"ssim", summary(ssim)}, {"pc", summary(pc)}, {"rmse", summary(rmse)}, {"psnr", psnr_j}}},
          {"per_image", per}};
}

} // namespace oat
