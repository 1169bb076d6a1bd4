#pragma once

#include "oat/core.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace oat {

/// sqrt(mean((pred - truth)^2)).
double rmse(const Image &pred, const Image &truth);

/// 20 log10(1 / rmse); +infinity for identical images.
double psnr(const Image &pred, const Image &truth);

/// Sample correlation over pixels. Throws UndefinedCorrelation if either image is constant.
double pearson(const Image &pred, const Image &truth);

/// Mean local SSIM over the valid region (no padding): 11x11 Gaussian window,
/// sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 (dynamic range 1).
double ssim(const Image &pred, const Image &truth);

/// Affine map onto [0, 1]; a constant image maps to all zeros.
Image normalize_minmax(const Image &img);

struct ImageMetrics {
  double ssim = 0.0;
  double pc = 0.0;
  double rmse = 0.0;
  double psnr = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0; // sample standard deviation, 0 for a single image
};

struct MetricReport {
  std::string label;
  std::vector<ImageMetrics> per_image;
  MetricSummary ssim, pc, rmse;
  /// Mean and std over finite values; mean is +infinity when every value is infinite.
  MetricSummary psnr;
  int psnr_inf_count = 0;

  std::size_t n() const noexcept { return per_image.size(); }
  /// Infinite PSNR values serialize as null.
  nlohmann::json to_json() const;
};

/// Metrics of every (pred, truth) pair. Predictions are min-max normalized
/// first when `normalize_predictions` is set; truths are used as given.
MetricReport evaluate_suite(const std::vector<Image> &preds, const std::vector<Image> &truths,
                            const std::string &label, bool normalize_predictions = true);

} // namespace oat
