#include "oat/errors.hpp"
#include "oat/metrics.hpp"
#include "oat/rng.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace oat;
using namespace oat::testing;

namespace {

const ImagingGrid kGrid = ImagingGrid::centered(24, 20, 1.0);

Image from(const ImagingGrid &g, auto &&fn) {
  Image img(g);
  for (int i = 0; i < g.ny(); ++i)
    for (int j = 0; j < g.nx(); ++j)
      img[static_cast<std::size_t>(i) * g.nx() + j] = fn(i, j);
  return img;
}

Image checker(const ImagingGrid &g, bool invert = false) {
  return from(g, [&](int i, int j) { return ((i + j) % 2 == 0) != invert ? 0.0 : 1.0; });
}

Image random_image(const ImagingGrid &g, std::uint64_t seed) {
  Image img(g);
  img.data = random_vector(g.size(), seed, 0.0, 1.0);
  return img;
}

} // namespace

TEST_CASE("rmse") {
  const Image a = random_image(kGrid, 1), b = random_image(kGrid, 2), c = random_image(kGrid, 3);
  CHECK(rmse(a, a) == 0.0);
  Image zero(kGrid), konst(kGrid);
  konst.data.assign(kGrid.size(), -0.3);
  CHECK(rmse(konst, zero) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(rmse(checker(kGrid), checker(kGrid, true)) == 1.0);
  CHECK(rmse(a, b) == rmse(b, a));
  CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c));
  CHECK_THROWS_AS(rmse(a, Image(ImagingGrid::centered(4, 4, 1.0))), InvalidArgument);
}

TEST_CASE("psnr") {
  const Image a = random_image(kGrid, 4);
  CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
  // Constant offsets give exact rmse values.
  auto offset = [&](double d) {
    Image b = a;
    for (auto &v : b.data)
      v += d;
    return psnr(b, a);
  };
  CHECK(offset(0.047) == doctest::Approx(26.558).epsilon(1e-4));
  CHECK(offset(0.349) == doctest::Approx(9.144).epsilon(1e-3));
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.01, 0.05, 0.1, 0.5}) {
    CHECK(offset(d) < prev);
    prev = offset(d);
  }
}

TEST_CASE("pearson") {
  const Image t = random_image(kGrid, 5);
  Image affine = t, neg = t;
  for (std::size_t j = 0; j < t.size(); ++j) {
    affine[j] = 2.0 * t[j] + 3.0;
    neg[j] = -t[j];
  }
  CHECK(pearson(affine, t) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pearson(neg, t) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK_THROWS_AS(pearson(t, Image(kGrid)), UndefinedCorrelation);
  CHECK_THROWS_AS(pearson(Image(kGrid), t), UndefinedCorrelation);

  // Additive noise at 20 dB SNR keeps the correlation high.
  const Image truth = from(ImagingGrid::centered(32, 32, 1.0), [](int i, int j) {
    return 0.5 + 0.5 * std::sin(0.2 * i) * std::cos(0.15 * j);
  });
  double ms = 0.0;
  for (double v : truth.data)
    ms += v * v / truth.size();
  const double sigma = std::sqrt(ms / 100.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    SplitMix64 rng(s);
    Image noisy = truth;
    for (auto &v : noisy.data)
      v += sigma * rng.normal();
    const double pc = pearson(noisy, truth);
    CHECK(pc > 0.9);
    CHECK(pc < 1.0);
  }
}

TEST_CASE("ssim") {
  const Image a = from(kGrid, [](int i, int j) { return 0.5 + 0.4 * std::sin(0.3 * j + 0.7 * i); });
  const Image b = from(kGrid, [](int i, int j) {
    return 0.5 + 0.3 * std::cos(0.11 * i * j / 3.0) + 0.1 * std::sin(0.5 * j);
  });
  CHECK(ssim(a, a) == 1.0);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
  // Reference from skimage.metrics.structural_similarity (gaussian weights,
  // population covariance), whose border crop is the valid region.
  CHECK(ssim(a, b) == doctest::Approx(-0.11119028555727807).epsilon(1e-10));
  CHECK(ssim(checker(kGrid), checker(kGrid, true)) ==
        doctest::Approx(-0.9964064683569567).epsilon(1e-10));
  CHECK(ssim(checker(kGrid), checker(kGrid, true)) < 0.3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double v = ssim(random_image(kGrid, 10 + s), random_image(kGrid, 20 + s));
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(ssim(Image(ImagingGrid::centered(10, 30, 1.0)), Image(ImagingGrid::centered(10, 30, 1.0))),
                  InvalidArgument);
}

TEST_CASE("evaluate suite") {
  const Image t = from(kGrid, [](int i, int j) { return (i * 24 + j) / 479.0; });
  const auto rep = evaluate_suite({t, t, t}, {t, t, t}, "copies");
  CHECK(rep.n() == 3);
  CHECK(rep.ssim.mean == 1.0);
  CHECK(rep.pc.mean == doctest::Approx(1.0));
  CHECK(rep.rmse.mean == 0.0);
  CHECK(rep.psnr.mean == std::numeric_limits<double>::infinity());
  CHECK(rep.psnr_inf_count == 3);
  CHECK(rep.ssim.std == 0.0);
  CHECK(rep.rmse.std == 0.0);
  const auto j = rep.to_json();
  CHECK(j["metrics"]["psnr"]["mean"].is_null());
  CHECK(j["metrics"]["psnr"]["inf_count"] == 3);
  CHECK(j["per_image"].size() == 3);
  CHECK(j["label"] == "copies");

  // Predictions are compared after min-max normalization.
  Image scaled = t;
  for (auto &v : scaled.data)
    v = 5.0 * v - 2.0;
  const auto rep2 = evaluate_suite({scaled}, {t}, "scaled");
  CHECK(rep2.rmse.mean <= 1e-15);

  const Image noisy = random_image(kGrid, 9);
  const auto rep3 = evaluate_suite({noisy, t}, {t, t}, "mixed");
  CHECK(rep3.psnr_inf_count == 1);
  CHECK(std::isfinite(rep3.psnr.mean));
  CHECK(rep3.rmse.std > 0.0);

  CHECK_THROWS_AS(evaluate_suite({t}, {t, t}, "bad"), InvalidArgument);
}
