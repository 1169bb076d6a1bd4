#include "oat/config.hpp"
#include "oat/datagen.hpp"
#include "oat/errors.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"
#include "oat/learned.hpp"
#include "oat/recon.hpp"

#include "support.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace oat;
using namespace oat::testing;

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

const std::vector<double> kMu{0.5, 0.5};
constexpr double kEta = 0.01;
constexpr double kEtaI = 1.0;

Vec as_eigen(const std::vector<double> &v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Image as_image(const ImagingGrid &g, const Vec &v) {
  return Image(g, std::vector<double>(v.data(), v.data() + v.size()));
}

ExperimentConfig with_sensors(ExperimentConfig cfg, int n_d) {
  cfg.sensor_spec.n_d = n_d;
  cfg.rebuild_sensors();
  return cfg;
}

// 32 sensors give A a trivial null space, so the minimizer over the
// components is unique; with 8 sensors x_1 = -x_2 in null(A) is free.
struct Instance {
  ExperimentConfig cfg;
  SparseOperator op;
  BandFilterBank bank;
  Image p0;
  Sinogram pd;

  explicit Instance(int n, const BandSpec *spec = nullptr, int n_d = 8)
      : cfg(with_sensors(desk(n), n_d)), op(nominal_operator(cfg)),
        bank(make_filter_bank(spec ? *spec : cfg.bands, cfg.fs())), p0(blob_phantom(cfg.grid)),
        pd(forward_apply(op, p0)) {
    // Noisy data so the minimizer does not fit exactly.
    pd = add_noise(pd, 30.0, 99);
  }

  std::vector<Image> random_components(std::uint64_t seed) const {
    std::vector<Image> x;
    for (int k = 0; k < bank.count(); ++k)
      x.emplace_back(cfg.grid, random_vector(cfg.grid.size(), seed + k, 0.1, 1.0));
    return x;
  }
};

// F_k A as a dense matrix: per channel, the materialized reject filter times
// that channel's rows of A.
Mat dense_reject_times(const Instance &in, const Mat &A, int k) {
  const int nt = in.op.n_t();
  const Mat F = materialize_filter_matrix(in.bank, k, nt, FilterVariant::reject);
  Mat out(A.rows(), A.cols());
  for (int l = 0; l < in.op.n_d(); ++l)
    out.middleRows(static_cast<Eigen::Index>(l) * nt, nt) =
        F * A.middleRows(static_cast<Eigen::Index>(l) * nt, nt);
  return out;
}

// Unconstrained minimizer of the loss over the stacked components.
std::vector<Vec> dense_minimizer(const Instance &in, const Vec &pd, const Vec &p0, double eta,
                                 double eta_i, const std::vector<double> &mu) {
  const Mat A = materialize_dense(in.op);
  const Eigen::Index N = A.cols();
  const int n = in.bank.count();
  const Mat base = A.transpose() * A + eta_i * Mat::Identity(N, N);
  Mat H(n * N, n * N);
  Vec rhs(n * N);
  for (int k = 0; k < n; ++k) {
    const Mat B = dense_reject_times(in, A, k);
    for (int j = 0; j < n; ++j)
      H.block(k * N, j * N, N, N) = base;
    H.block(k * N, k * N, N, N) += eta * mu[k] * B.transpose() * B;
    rhs.segment(k * N, N) = A.transpose() * pd + eta_i * p0;
  }
  const Vec X = H.ldlt().solve(rhs);
  std::vector<Vec> out;
  for (int k = 0; k < n; ++k)
    out.push_back(X.segment(k * N, N));
  return out;
}

std::vector<Image> to_images(const ImagingGrid &g, const std::vector<Vec> &xs) {
  std::vector<Image> out;
  for (const Vec &x : xs)
    out.push_back(as_image(g, x));
  return out;
}

double grad_norm(const std::vector<Image> &g) {
  double s = 0.0;
  for (const Image &gk : g)
    s += dot(gk.data, gk.data);
  return std::sqrt(s);
}

std::vector<TrainingSample> desk_samples(const ExperimentConfig &cfg, int count,
                                         std::uint64_t master) {
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    DatasetRecord r = simulate_record(cfg, static_cast<std::uint64_t>(i), PhantomMix::mixed, master);
    out.push_back({std::move(r.pd), std::move(r.p0)});
  }
  return out;
}

} // namespace

TEST_CASE("loss terms on trivial inputs") {
  const Instance in(16);
  const std::vector<Image> zero(2, Image(in.cfg.grid));
  const LossBreakdown l = loss_eval(in.op, in.bank, in.pd, Image(in.cfg.grid), zero, kEta, kEtaI, kMu);
  CHECK(l.total == doctest::Approx(dot(in.pd.data, in.pd.data)).epsilon(1e-14));
  CHECK(l.band_term == 0.0);
  CHECK(l.image_term == 0.0);

  // Exact fit: noiseless data and components summing to p0.
  const Sinogram clean = forward_apply(in.op, in.p0);
  std::vector<Image> split(2, Image(in.cfg.grid));
  for (std::size_t j = 0; j < in.p0.size(); ++j) {
    split[0][j] = 0.25 * in.p0[j];
    split[1][j] = in.p0[j] - split[0][j];
  }
  const LossBreakdown fit = loss_eval(in.op, in.bank, clean, in.p0, split, kEta, kEtaI, kMu);
  CHECK(fit.data_term <= 1e-24 * dot(clean.data, clean.data));
  CHECK(fit.image_term <= 1e-24 * dot(in.p0.data, in.p0.data));
}

TEST_CASE("loss breakdown matches dense evaluation") {
  const Instance in(16);
  const auto x = in.random_components(3);
  const LossBreakdown l = loss_eval(in.op, in.bank, in.pd, in.p0, x, kEta, kEtaI, kMu);

  const Mat A = materialize_dense(in.op);
  const Vec s = as_eigen(x[0].data) + as_eigen(x[1].data);
  const double data = (as_eigen(in.pd.data) - A * s).squaredNorm();
  double band = 0.0;
  for (int k = 0; k < 2; ++k)
    band += kEta * kMu[k] * (dense_reject_times(in, A, k) * as_eigen(x[k].data)).squaredNorm();
  const double image = kEtaI * (as_eigen(in.p0.data) - s).squaredNorm();

  CHECK(std::abs(l.data_term - data) <= 1e-10 * data);
  CHECK(std::abs(l.band_term - band) <= 1e-10 * band);
  CHECK(std::abs(l.image_term - image) <= 1e-10 * image);
  CHECK(std::abs(l.total - (l.data_term + l.band_term + l.image_term)) <= 1e-12 * l.total);
  CHECK(l.data_term >= 0.0);
  CHECK(l.band_term >= 0.0);
}

TEST_CASE("loss gradient against central differences") {
  auto run = [](const Instance &in, std::vector<double> mu) {
    auto x = in.random_components(11);
    const auto g = loss_grad(in.op, in.bank, in.pd, in.p0, x, kEta, kEtaI, mu);
    const double h = 1e-5; // components are O(1)
    SplitMix64 pick(5);
    double worst = 0.0;
    for (int k = 0; k < in.bank.count(); ++k) {
      for (int t = 0; t < 20; ++t) {
        const std::size_t j = pick.below(in.cfg.grid.size());
        const double keep = x[k][j];
        x[k][j] = keep + h;
        const double up = loss_eval(in.op, in.bank, in.pd, in.p0, x, kEta, kEtaI, mu).total;
        x[k][j] = keep - h;
        const double down = loss_eval(in.op, in.bank, in.pd, in.p0, x, kEta, kEtaI, mu).total;
        x[k][j] = keep;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g[k][j]) / std::abs(g[k][j]));
      }
    }
    return worst;
  };
  SUBCASE("two bands") { CHECK(run(Instance(16), kMu) <= 1e-5); }
  SUBCASE("three bands") {
    const BandSpec spec = three_band_spec();
    CHECK(run(Instance(16, &spec), {1.0 / 3, 1.0 / 3, 1.0 / 3}) <= 1e-5);
  }
}

TEST_CASE("gradient vanishes at the dense minimizer") {
  const Instance in(16, nullptr, 32);
  const auto xs = dense_minimizer(in, as_eigen(in.pd.data), as_eigen(in.p0.data), kEta, kEtaI, kMu);
  const auto g = loss_grad(in.op, in.bank, in.pd, in.p0, to_images(in.cfg.grid, xs), kEta, kEtaI, kMu);
  const std::vector<Image> zero(2, Image(in.cfg.grid));
  const double scale = grad_norm(loss_grad(in.op, in.bank, in.pd, in.p0, zero, kEta, kEtaI, kMu));
  CHECK(grad_norm(g) <= 1e-8 * scale);
}

TEST_CASE("pure data term gradient is shared by all bands") {
  const Instance in(16);
  const auto x = in.random_components(21);
  const auto g = loss_grad(in.op, in.bank, in.pd, in.p0, x, 0.0, 0.0, kMu);
  CHECK(g[0].data == g[1].data);

  Sinogram r = in.pd;
  const Sinogram As = forward_apply(in.op, Image(in.cfg.grid, [&] {
    std::vector<double> s(x[0].data);
    for (std::size_t j = 0; j < s.size(); ++j)
      s[j] += x[1][j];
    return s;
  }()));
  for (std::size_t i = 0; i < r.data.size(); ++i)
    r.data[i] = -2.0 * (r.data[i] - As.data[i]);
  CHECK(rel_diff(g[0].data, adjoint_apply(in.op, r).data) <= 1e-12);
}

TEST_CASE("without the image term the loss is the unregularized fbMB objective") {
  const Instance in(16);
  const auto x = in.random_components(31);
  const double l = loss_eval(in.op, in.bank, in.pd, in.p0, x, kEta, 0.0, kMu).total;
  const double f = fbmb_objective(in.op, in.pd, in.bank, 0.0, kEta, kMu, x);
  CHECK(std::abs(l - f) <= 1e-12 * f);
}

TEST_CASE("unconstrained minimizer scales with the data") {
  const Instance in(16, nullptr, 32);
  const Vec pd = as_eigen(in.pd.data), p0 = as_eigen(in.p0.data);
  const auto a = dense_minimizer(in, pd, p0, kEta, kEtaI, kMu);
  const auto b = dense_minimizer(in, 3.5 * pd, 3.5 * p0, kEta, kEtaI, kMu);
  for (int k = 0; k < 2; ++k)
    CHECK((b[k] - 3.5 * a[k]).norm() <= 1e-8 * (3.5 * a[k]).norm());
}

TEST_CASE("loss argument checks") {
  const Instance in(16);
  const auto x = in.random_components(1);
  CHECK_THROWS_AS(loss_eval(in.op, in.bank, in.pd, in.p0, {x[0]}, kEta, kEtaI, kMu), InvalidArgument);
  CHECK_THROWS_AS(loss_eval(in.op, in.bank, in.pd, in.p0, x, kEta, kEtaI, std::vector<double>{1.0}),
                  InvalidArgument);
  CHECK_THROWS_AS(loss_eval(in.op, in.bank, Sinogram(3, 10, in.op.dt()), in.p0, x, kEta, kEtaI, kMu),
                  InvalidArgument);
  CHECK_THROWS_AS(loss_eval(in.op, in.bank, in.pd, Image(desk(8).grid), x, kEta, kEtaI, kMu),
                  InvalidArgument);
  const BandFilterBank padded = make_filter_bank(in.cfg.bands, in.cfg.fs(), FilterPath::padded);
  CHECK_THROWS_AS(loss_grad(in.op, padded, in.pd, in.p0, x, kEta, kEtaI, kMu), UnsupportedMode);
}

TEST_CASE("model forward") {
  const Instance in(16);
  const auto N = static_cast<Eigen::Index>(in.cfg.grid.size());
  LinearBandModel m = zero_model(in.cfg.grid, 2);
  for (const Image &x : model_forward(m, in.pd, in.op))
    CHECK(std::all_of(x.data.begin(), x.data.end(), [](double v) { return v == 0.0; }));

  for (Mat &w : m.weights)
    w = 0.5 * Mat::Identity(N, N);
  const auto xs = model_forward(m, in.pd, in.op);
  const Image y = adjoint_apply(in.op, in.pd);
  for (std::size_t j = 0; j < y.size(); ++j)
    REQUIRE(xs[0][j] + xs[1][j] == y[j]);

  m.sinogram_scale = 2.0;
  CHECK(model_forward(m, in.pd, in.op)[0][7] == doctest::Approx(0.125 * y[7]).epsilon(1e-15));

  m.sinogram_scale = 1.0;
  m.clamp_outputs = true;
  for (Mat &w : m.weights)
    w = -Mat::Identity(N, N);
  // W = -I clamps every pixel where y is non-negative to zero.
  const auto clamped = model_forward(m, in.pd, in.op);
  for (std::size_t j = 0; j < y.size(); ++j)
    REQUIRE(clamped[0][j] == std::max(0.0, -y[j]));

  CHECK_THROWS_AS(model_forward(zero_model(desk(8).grid, 2), in.pd, in.op), InvalidArgument);
  m.weights[1](3, 3) = std::nan("");
  CHECK_THROWS_AS(model_forward(m, in.pd, in.op), InvalidArgument);
}

TEST_CASE("adam") {
  std::vector<Mat> p{Mat::Constant(3, 2, 1.5)};
  AdamState st;
  st.lr = 1e-2;
  adam_step(p, {Mat::Zero(3, 2)}, st);
  CHECK(p[0] == Mat::Constant(3, 2, 1.5));
  CHECK(st.step == 1);

  // First step: m_hat = g, v_hat = g^2.
  std::vector<Mat> q{Mat::Zero(1, 3)};
  AdamState first;
  first.lr = 1e-3;
  Mat g(1, 3);
  g << 2.0, -0.5, 1e-9;
  adam_step(q, {g}, first);
  for (int i = 0; i < 3; ++i)
    CHECK(q[0](0, i) == doctest::Approx(-1e-3 * g(0, i) / (std::abs(g(0, i)) + 1e-8)).epsilon(1e-12));

  // Constant gradient: the bias-corrected ratio tends to 1.
  std::vector<Mat> r{Mat::Zero(1, 1)};
  AdamState cst;
  cst.lr = 1e-3;
  double last = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double before = r[0](0, 0);
    adam_step(r, {Mat::Constant(1, 1, 0.37)}, cst);
    last = before - r[0](0, 0);
  }
  CHECK(last == doctest::Approx(1e-3).epsilon(0.01));

  CHECK_THROWS_AS(adam_step(r, {Mat::Zero(2, 1)}, cst), InvalidArgument);
}

TEST_CASE("training a single sample reaches the closed-form optimum") {
  Instance in(16, nullptr, 32);
  in.pd = forward_apply(in.op, shapes_phantom(in.cfg.grid, 4, ShapeKind::disks));
  in.p0 = shapes_phantom(in.cfg.grid, 4, ShapeKind::disks);
  in.pd = add_noise(in.pd, 40.0, 8);
  const std::vector<TrainingSample> one{{in.pd, in.p0}};

  LinearBandModel m = zero_model(in.cfg.grid, 2);
  TrainConfig tc;
  tc.epochs = 3000;
  tc.batch = 1;
  tc.lr = 2e-3;
  tc.lr_decay = 0.998;
  const TrainHistory h = train_model(m, one, {}, in.op, in.bank, tc);
  CHECK(h.steps == 3000);
  CHECK(h.val_loss.empty());

  const double c = m.sinogram_scale;
  const double max_abs = std::abs(*std::max_element(in.pd.data.begin(), in.pd.data.end(),
                                                    [](double a, double b) { return std::abs(a) < std::abs(b); }));
  CHECK(c == max_abs);

  Instance scaled = in;
  scaled.op = in.op.scaled(1.0 / c);
  const Vec pd_s = as_eigen(in.pd.data) / c;
  const auto xs = dense_minimizer(scaled, pd_s, as_eigen(in.p0.data), kEta, kEtaI, kMu);
  Sinogram pd_img = in.pd;
  for (double &v : pd_img.data)
    v /= c;
  const double best =
      loss_eval(scaled.op, in.bank, pd_img, in.p0, to_images(in.cfg.grid, xs), kEta, kEtaI, kMu).total;
  const double trained = mean_model_loss(m, one, in.op, in.bank, kEta, kEtaI, kMu, true);
  CHECK(trained >= best * (1.0 - 1e-9));
  CHECK(trained <= 1.01 * best);
  CHECK(m.training.at("steps") == 3000);
}

TEST_CASE("training on desk records") {
  const ExperimentConfig cfg = desk_config();
  const SparseOperator op = nominal_operator(cfg);
  const BandFilterBank bank = make_filter_bank(cfg.bands, cfg.fs());
  const auto train = desk_samples(cfg, 16, 77);
  const std::vector<TrainingSample> val(train.begin(), train.begin() + 4);

  TrainConfig tc;
  tc.epochs = 10;
  tc.seed = 3;
  LinearBandModel a = zero_model(cfg.grid, 2);
  const TrainHistory h = train_model(a, train, val, op, bank, tc);
  REQUIRE(h.train_loss.size() == 10);
  REQUIRE(h.val_loss.size() == 10);
  for (std::size_t e = 1; e < h.train_loss.size(); ++e)
    CHECK(h.train_loss[e] < h.train_loss[e - 1]);

  SUBCASE("deterministic given the seed") {
    LinearBandModel b = zero_model(cfg.grid, 2);
    train_model(b, train, val, op, bank, tc);
    for (int k = 0; k < 2; ++k)
      CHECK(a.weights[k] == b.weights[k]);
    tc.seed = 4;
    LinearBandModel c = zero_model(cfg.grid, 2);
    train_model(c, train, val, op, bank, tc);
    CHECK(a.weights[0] != c.weights[0]);
  }

  SUBCASE("save and load") {
    const auto dir = std::filesystem::temp_directory_path() / "oat_test_model";
    std::filesystem::remove_all(dir);
    save_model(a, dir);
    CHECK(std::filesystem::exists(dir / "W_1.oat"));
    CHECK(std::filesystem::exists(dir / "W_2.oat"));
    const LinearBandModel back = load_model(dir);
    CHECK(back.grid == a.grid);
    CHECK(back.sinogram_scale == a.sinogram_scale);
    CHECK(back.clamp_outputs == a.clamp_outputs);
    CHECK(back.training.at("config").at("epochs") == 10);
    for (int k = 0; k < 2; ++k)
      CHECK((back.weights[k] - a.weights[k]).cwiseAbs().maxCoeff() <=
            1e-6 * a.weights[k].cwiseAbs().maxCoeff());
    std::filesystem::remove(dir / "W_2.oat");
    CHECK_THROWS_AS(load_model(dir), IoError);
    std::filesystem::remove_all(dir);
  }

  SUBCASE("divergence is reported") {
    tc.lr = 1e300;
    LinearBandModel d = zero_model(cfg.grid, 2);
    CHECK_THROWS_AS(train_model(d, train, {}, op, bank, tc), TrainingDiverged);
  }

  SUBCASE("argument checks") {
    LinearBandModel d = zero_model(cfg.grid, 2);
    CHECK_THROWS_AS(train_model(d, {}, {}, op, bank, tc), InvalidArgument);
    tc.batch = 0;
    CHECK_THROWS_AS(train_model(d, train, {}, op, bank, tc), InvalidArgument);
    tc.batch = 2;
    LinearBandModel three = zero_model(cfg.grid, 3);
    CHECK_THROWS_AS(train_model(three, train, {}, op, bank, tc), InvalidArgument);
  }
}
