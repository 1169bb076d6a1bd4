#include "oat/learned.hpp"

#include "oat/errors.hpp"
#include "oat/metrics.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"
#include "oat/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

namespace oat {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::span<const double> cspan(const Vec &v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<double> mspan(Vec &v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Eigen::Map<const Vec> as_vec(const std::vector<double> &v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

void check_inputs(const SparseOperator &op, const BandFilterBank &bank, const Sinogram &pd,
                  const Image &p0, const std::vector<Image> &x, std::span<const double> mu) {
  if (pd.n_d != op.n_d() || pd.n_t != op.n_t() || pd.data.size() != op.rows())
    throw InvalidArgument("sinogram shape does not match operator");
  if (!(p0.grid == op.grid()) || p0.size() != op.cols())
    throw InvalidArgument("p0 grid does not match operator");
  if (bank.count() < 1)
    throw InvalidArgument("filter bank has no bands");
  if (static_cast<int>(x.size()) != bank.count())
    throw InvalidArgument("need one component per band");
  for (const Image &xk : x)
    if (!(xk.grid == op.grid()) || xk.size() != op.cols())
      throw InvalidArgument("component grid does not match operator");
  if (static_cast<int>(mu.size()) != bank.count())
    throw InvalidArgument("mu must have one weight per band");
  for (double m : mu)
    if (!(m >= 0.0))
      throw InvalidArgument("band weights must be non-negative");
  if (bank.path != FilterPath::strict)
    throw UnsupportedMode("the training loss requires the strict filter path");
  if (std::abs(bank.fs * op.dt() - 1.0) > 1e-9)
    throw InvalidArgument("filter bank sampling rate does not match operator dt");
}

struct LossState {
  LossBreakdown terms;
  std::vector<Vec> grad; // filled only when requested
};

// Shared kernel of loss_eval and loss_grad on raw vectors.
LossState evaluate(const SparseOperator &op, const BandFilterBank &bank, const Vec &pd,
                   const Vec &p0, const std::vector<Vec> &x, double eta, double eta_i,
                   std::span<const double> mu, bool want_grad) {
  const int n = static_cast<int>(x.size());
  const auto N = static_cast<Eigen::Index>(op.cols());
  const auto M = static_cast<Eigen::Index>(op.rows());

  Vec s = Vec::Zero(N);
  Vec As = Vec::Zero(M);
  std::vector<Vec> v(n);
  LossState out;
  for (int k = 0; k < n; ++k) {
    s += x[k];
    Vec u(M);
    op.forward(cspan(x[k]), mspan(u));
    As += u;
    v[k].resize(M);
    bank.apply(k, FilterVariant::reject, op.n_d(), op.n_t(), cspan(u), mspan(v[k]));
    out.terms.band_term += eta * mu[k] * v[k].squaredNorm();
  }
  const Vec r = pd - As;
  const Vec e = p0 - s;
  out.terms.data_term = r.squaredNorm();
  out.terms.image_term = eta_i * e.squaredNorm();
  out.terms.total = out.terms.data_term + out.terms.band_term + out.terms.image_term;
  if (!want_grad)
    return out;

  Vec common(N);
  op.adjoint(cspan(r), mspan(common));
  common = -2.0 * common - 2.0 * eta_i * e;
  out.grad.resize(n);
  for (int k = 0; k < n; ++k) {
    out.grad[k] = common;
    if (eta * mu[k] == 0.0)
      continue;
    Vec w(M);
    bank.apply(k, FilterVariant::reject, op.n_d(), op.n_t(), cspan(v[k]), mspan(w));
    Vec b(N);
    op.adjoint(cspan(w), mspan(b));
    out.grad[k] += 2.0 * eta * mu[k] * b;
  }
  return out;
}

std::vector<Vec> to_vecs(const std::vector<Image> &x) {
  std::vector<Vec> out;
  out.reserve(x.size());
  for (const Image &xk : x)
    out.push_back(as_vec(xk.data));
  return out;
}

Image to_image(const ImagingGrid &grid, const Vec &v) {
  return Image(grid, std::vector<double>(v.data(), v.data() + v.size()));
}

Vec scaled_sinogram(const Sinogram &pd, double c) { return as_vec(pd.data) / c; }

Vec target_of(const Image &p0, bool normalize) {
  return normalize ? Vec(as_vec(normalize_minmax(p0).data)) : Vec(as_vec(p0.data));
}

void check_sample(const SparseOperator &op, const TrainingSample &s) {
  if (s.pd.n_d != op.n_d() || s.pd.n_t != op.n_t() || s.pd.data.size() != op.rows())
    throw InvalidArgument("training sinogram shape does not match operator");
  if (!(s.p0.grid == op.grid()))
    throw InvalidArgument("training image grid does not match operator");
}

} // namespace

LossBreakdown loss_eval(const SparseOperator &op, const BandFilterBank &bank, const Sinogram &pd,
                        const Image &p0, const std::vector<Image> &x, double eta, double eta_i,
                        std::span<const double> mu) {
  check_inputs(op, bank, pd, p0, x, mu);
  return evaluate(op, bank, as_vec(pd.data), as_vec(p0.data), to_vecs(x), eta, eta_i, mu, false)
      .terms;
}

std::vector<Image> loss_grad(const SparseOperator &op, const BandFilterBank &bank,
                             const Sinogram &pd, const Image &p0, const std::vector<Image> &x,
                             double eta, double eta_i, std::span<const double> mu) {
  check_inputs(op, bank, pd, p0, x, mu);
  const LossState st =
      evaluate(op, bank, as_vec(pd.data), as_vec(p0.data), to_vecs(x), eta, eta_i, mu, true);
  std::vector<Image> out;
  out.reserve(st.grad.size());
  for (const Vec &g : st.grad)
    out.push_back(to_image(op.grid(), g));
  return out;
}

void LinearBandModel::validate() const {
  if (weights.empty())
    throw InvalidArgument("model needs at least one band");
  const auto N = static_cast<Eigen::Index>(grid.size());
  for (const Mat &w : weights) {
    if (w.rows() != N || w.cols() != N)
      throw InvalidArgument("band map must be N x N for the model grid");
    if (!w.allFinite())
      throw InvalidArgument("band map has non-finite weights");
  }
  if (!(sinogram_scale > 0.0) || !std::isfinite(sinogram_scale))
    throw InvalidArgument("sinogram_scale must be positive and finite");
}

LinearBandModel zero_model(const ImagingGrid &grid, int bands) {
  if (bands < 1)
    throw InvalidArgument("model needs at least one band");
  const auto N = static_cast<Eigen::Index>(grid.size());
  LinearBandModel m{grid, std::vector<Mat>(static_cast<std::size_t>(bands), Mat::Zero(N, N))};
  return m;
}

Eigen::VectorXd model_input(const LinearBandModel &model, const SparseOperator &op,
                            const Sinogram &pd) {
  model.validate();
  if (!(op.grid() == model.grid))
    throw InvalidArgument("model grid does not match operator");
  if (pd.n_d != op.n_d() || pd.n_t != op.n_t() || pd.data.size() != op.rows())
    throw InvalidArgument("sinogram shape does not match operator");
  Vec y(static_cast<Eigen::Index>(op.cols()));
  op.adjoint(pd.data, mspan(y));
  return y / (model.sinogram_scale * model.sinogram_scale);
}

std::vector<Image> model_forward(const LinearBandModel &model, const Sinogram &pd,
                                 const SparseOperator &op) {
  const Vec y = model_input(model, op, pd);
  std::vector<Image> out;
  out.reserve(model.weights.size());
  for (const Mat &w : model.weights) {
    Vec x = w * y;
    if (model.clamp_outputs)
      x = x.cwiseMax(0.0);
    out.push_back(to_image(model.grid, x));
  }
  return out;
}

void adam_step(std::vector<Mat> &params, const std::vector<Mat> &grads, AdamState &state) {
  if (params.size() != grads.size())
    throw InvalidArgument("parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw InvalidArgument("gradient shape does not match parameter");
  if (state.m.empty()) {
    for (const Mat &p : params) {
      state.m.push_back(Mat::Zero(p.rows(), p.cols()));
      state.v.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size())
    throw InvalidArgument("Adam state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = grads[i].array();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    params[i].array() -= state.lr * (m / c1) / ((v / c2).sqrt() + state.epsilon);
  }
}

void TrainConfig::validate(int bands) const {
  if (epochs < 1)
    throw InvalidArgument("epochs must be >= 1");
  if (batch < 1)
    throw InvalidArgument("batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw InvalidArgument("learning rate must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw InvalidArgument("lr_decay must lie in (0, 1]");
  if (!(eta >= 0.0) || !(eta_i >= 0.0))
    throw InvalidArgument("loss weights must be non-negative");
  if (static_cast<int>(mu.size()) != bands)
    throw InvalidArgument("mu must have one weight per band");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"seed", seed},
          {"eta", eta},
          {"eta_i", eta_i},
          {"mu", mu},
          {"init", init == WeightInit::zeros ? "zeros" : "scaled_identity"},
          {"normalize_targets", normalize_targets}};
}

double mean_model_loss(const LinearBandModel &model, const std::vector<TrainingSample> &samples,
                       const SparseOperator &op, const BandFilterBank &bank, double eta,
                       double eta_i, std::span<const double> mu, bool normalize_targets) {
  if (samples.empty())
    throw InvalidArgument("no samples to evaluate");
  model.validate();
  if (model.bands() != bank.count())
    throw InvalidArgument("model and filter bank band counts differ");
  const double c = model.sinogram_scale;
  const SparseOperator op_s = op.scaled(1.0 / c);
  std::vector<double> losses(samples.size());
  parallel_for(static_cast<std::ptrdiff_t>(samples.size()), [&](std::ptrdiff_t i) {
    const TrainingSample &smp = samples[static_cast<std::size_t>(i)];
    check_sample(op, smp);
    const Vec y = model_input(model, op, smp.pd);
    std::vector<Vec> x;
    for (const Mat &w : model.weights) {
      Vec xk = w * y;
      if (model.clamp_outputs)
        xk = xk.cwiseMax(0.0);
      x.push_back(std::move(xk));
    }
    losses[static_cast<std::size_t>(i)] =
        evaluate(op_s, bank, scaled_sinogram(smp.pd, c), target_of(smp.p0, normalize_targets), x,
                 eta, eta_i, mu, false)
            .terms.total;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

TrainHistory train_model(LinearBandModel &model, const std::vector<TrainingSample> &train,
                         const std::vector<TrainingSample> &val, const SparseOperator &op,
                         const BandFilterBank &bank, const TrainConfig &cfg) {
  if (train.empty())
    throw InvalidArgument("training set is empty");
  const int n = bank.count();
  cfg.validate(n);
  if (model.bands() != n)
    throw InvalidArgument("model and filter bank band counts differ");
  if (!(model.grid == op.grid()))
    throw InvalidArgument("model grid does not match operator");
  for (const TrainingSample &s : train)
    check_sample(op, s);
  for (const TrainingSample &s : val)
    check_sample(op, s);
  {
    std::vector<Image> probe(static_cast<std::size_t>(n), Image(op.grid()));
    check_inputs(op, bank, train.front().pd, train.front().p0, probe, cfg.mu);
  }

  double c = 0.0;
  for (const TrainingSample &s : train)
    for (double v : s.pd.data)
      c = std::max(c, std::abs(v));
  if (!(c > 0.0) || !std::isfinite(c))
    throw InvalidArgument("training sinograms are all zero or non-finite");
  model.sinogram_scale = c;
  const SparseOperator op_s = op.scaled(1.0 / c);

  const auto N = static_cast<Eigen::Index>(op.cols());
  const auto M = static_cast<Eigen::Index>(train.size());
  Mat Y(N, M);
  std::vector<Vec> pds(train.size()), targets(train.size());
  for (Eigen::Index i = 0; i < M; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    pds[iu] = scaled_sinogram(train[iu].pd, c);
    targets[iu] = target_of(train[iu].p0, cfg.normalize_targets);
    Vec y(N);
    op_s.adjoint(cspan(pds[iu]), mspan(y));
    Y.col(i) = y;
  }

  model.weights.assign(static_cast<std::size_t>(n), Mat::Zero(N, N));
  if (cfg.init == WeightInit::scaled_identity) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < M; ++i) {
      num += Y.col(i).dot(targets[static_cast<std::size_t>(i)]);
      den += Y.col(i).squaredNorm();
    }
    const double alpha = den > 0.0 ? num / den : 0.0;
    for (Mat &w : model.weights)
      w.diagonal().setConstant(alpha / n);
  }

  AdamState adam;
  adam.lr = cfg.lr;
  TrainHistory hist;
  std::vector<std::size_t> order(train.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(hash64(cfg.seed, static_cast<std::uint64_t>(epoch), SeedStream::shuffle));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const auto B = static_cast<Eigen::Index>(stop - start);
      Mat Yb(N, B);
      for (Eigen::Index b = 0; b < B; ++b)
        Yb.col(b) = Y.col(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(b)]));

      std::vector<Mat> G(static_cast<std::size_t>(n), Mat(N, B));
      std::vector<double> losses(static_cast<std::size_t>(B));
      parallel_for(B, [&](std::ptrdiff_t b) {
        const std::size_t idx = order[start + static_cast<std::size_t>(b)];
        std::vector<Vec> x(static_cast<std::size_t>(n));
        std::vector<Vec> mask(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
          x[k] = model.weights[k] * Yb.col(b);
          if (model.clamp_outputs) {
            mask[k] = (x[k].array() > 0.0).cast<double>().matrix();
            x[k] = x[k].cwiseMax(0.0);
          }
        }
        LossState st = evaluate(op_s, bank, pds[idx], targets[idx], x, cfg.eta, cfg.eta_i,
                                cfg.mu, true);
        losses[static_cast<std::size_t>(b)] = st.terms.total;
        for (int k = 0; k < n; ++k)
          G[k].col(b) = model.clamp_outputs ? Vec(st.grad[k].cwiseProduct(mask[k])) : st.grad[k];
      });

      double batch_sum = 0.0;
      for (double l : losses)
        batch_sum += l;
      if (!std::isfinite(batch_sum))
        throw TrainingDiverged(epoch, hist.steps, "non-finite loss");
      epoch_sum += batch_sum;

      std::vector<Mat> grads(static_cast<std::size_t>(n));
      for (int k = 0; k < n; ++k)
        grads[k].noalias() = G[k] * Yb.transpose() / static_cast<double>(B);
      adam_step(model.weights, grads, adam);
      ++hist.steps;
      for (const Mat &w : model.weights)
        if (!w.allFinite())
          throw TrainingDiverged(epoch, hist.steps, "non-finite weights");
    }
    hist.train_loss.push_back(epoch_sum / static_cast<double>(train.size()));
    if (!val.empty()) {
      const double vl =
          mean_model_loss(model, val, op, bank, cfg.eta, cfg.eta_i, cfg.mu, cfg.normalize_targets);
      if (!std::isfinite(vl))
        throw TrainingDiverged(epoch, hist.steps, "non-finite validation loss");
      hist.val_loss.push_back(vl);
    }
    adam.lr *= cfg.lr_decay;
  }

  model.training = {{"config", cfg.to_json()},
                    {"train_size", train.size()},
                    {"val_size", val.size()},
                    {"steps", hist.steps},
                    {"final_train_loss", hist.train_loss.back()},
                    {"final_val_loss", hist.val_loss.empty() ? nlohmann::json(nullptr)
                                                             : nlohmann::json(hist.val_loss.back())}};
  return hist;
}

void save_model(const LinearBandModel &model, const std::filesystem::path &dir) {
  model.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create model directory " + dir.string() + ": " + ec.message());
  const auto N = static_cast<std::uint32_t>(model.grid.size());
  const std::uint32_t shape[2] = {N, N};
  for (int k = 0; k < model.bands(); ++k) {
    // Row-major on disk; Eigen storage is column-major.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w =
        model.weights[k];
    write_tensor(dir / ("W_" + std::to_string(k + 1) + ".oat"), shape,
                 {w.data(), static_cast<std::size_t>(w.size())});
  }
  const ImagingGrid &g = model.grid;
  nlohmann::json meta = {{"format_version", 1},
                         {"bands", model.bands()},
                         {"N", N},
                         {"grid",
                          {{"nx", g.nx()},
                           {"ny", g.ny()},
                           {"dx", g.dx()},
                           {"origin", {g.origin().x, g.origin().y}},
                           {"slice_thickness", g.slice_thickness()}}},
                         {"clamp_outputs", model.clamp_outputs},
                         {"sinogram_scale", model.sinogram_scale},
                         {"training", model.training}};
  write_file_atomic(dir / "model.json", meta.dump(2) + "\n");
}

LinearBandModel load_model(const std::filesystem::path &dir) {
  std::ifstream in(dir / "model.json");
  if (!in)
    throw IoError("cannot open " + (dir / "model.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
    const auto &gj = meta.at("grid");
    const ImagingGrid grid(gj.at("nx").get<int>(), gj.at("ny").get<int>(),
                           gj.at("dx").get<double>(),
                           {gj.at("origin").at(0).get<double>(), gj.at("origin").at(1).get<double>()},
                           gj.at("slice_thickness").get<double>());
    LinearBandModel model{grid, {}};
    model.clamp_outputs = meta.at("clamp_outputs").get<bool>();
    model.sinogram_scale = meta.at("sinogram_scale").get<double>();
    model.training = meta.value("training", nlohmann::json::object());
    const int bands = meta.at("bands").get<int>();
    const auto N = static_cast<Eigen::Index>(grid.size());
    for (int k = 0; k < bands; ++k) {
      const Tensor t = read_tensor(dir / ("W_" + std::to_string(k + 1) + ".oat"));
      if (t.shape.size() != 2 || static_cast<Eigen::Index>(t.shape[0]) != N ||
          static_cast<Eigen::Index>(t.shape[1]) != N)
        throw FormatError("band map W_" + std::to_string(k + 1) + " has the wrong shape");
      model.weights.push_back(
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
              t.data.data(), N, N));
    }
    model.validate();
    return model;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("malformed model.json: " + std::string(e.what()));
  } catch (const InvalidArgument &e) {
    throw FormatError("invalid model: " + std::string(e.what()));
  }
}

} // namespace oat
