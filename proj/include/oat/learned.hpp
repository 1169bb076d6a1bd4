#pragma once

#include "oat/core.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace oat {

/// Terms of the frequency-disentangling training loss for components x_k with
/// sum s:
///   data  = ||p_d - A s||^2
///   band  = eta * sum_k mu_k ||F_k A x_k||^2
///   image = eta_i * ||p_0 - s||^2
struct LossBreakdown {
  double data_term = 0.0;
  double band_term = 0.0;
  double image_term = 0.0;
  double total = 0.0;
};

/// Requires a strict filter bank whose rate matches the operator.
LossBreakdown loss_eval(const SparseOperator &op, const BandFilterBank &bank, const Sinogram &pd,
                        const Image &p0, const std::vector<Image> &x, double eta, double eta_i,
                        std::span<const double> mu);

/// d total / d x_k = -2 A^T (p_d - A s) + 2 eta mu_k A^T F_k F_k A x_k - 2 eta_i (p_0 - s).
std::vector<Image> loss_grad(const SparseOperator &op, const BandFilterBank &bank,
                             const Sinogram &pd, const Image &p0, const std::vector<Image> &x,
                             double eta, double eta_i, std::span<const double> mu);

/// Per-band linear maps on the back-projection: with y = A^T p_d / c^2,
/// x_k = W_k y, clamped at zero when clamp_outputs is set. c is
/// sinogram_scale, the factor that brought the training sinograms to unit peak.
struct LinearBandModel {
  ImagingGrid grid;
  std::vector<Eigen::MatrixXd> weights;
  bool clamp_outputs = false;
  double sinogram_scale = 1.0;
  /// Free-form record of how the weights were produced.
  nlohmann::json training = nlohmann::json::object();

  int bands() const noexcept { return static_cast<int>(weights.size()); }
  /// Throws InvalidArgument unless n >= 1, every W_k is N x N and finite, c > 0.
  void validate() const;
};

LinearBandModel zero_model(const ImagingGrid &grid, int bands);

/// Model input y = A^T p_d / c^2.
Eigen::VectorXd model_input(const LinearBandModel &model, const SparseOperator &op,
                            const Sinogram &pd);

std::vector<Image> model_forward(const LinearBandModel &model, const Sinogram &pd,
                                 const SparseOperator &op);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

/// Bias-corrected Adam. Moments are allocated on the first call.
void adam_step(std::vector<Eigen::MatrixXd> &params, const std::vector<Eigen::MatrixXd> &grads,
               AdamState &state);

struct TrainingSample {
  Sinogram pd;
  Image p0;
};

enum class WeightInit {
  zeros,
  /// W_k = (alpha / n) I with alpha the least-squares gain from y to p_0 over
  /// the training set.
  scaled_identity,
};

struct TrainConfig {
  int epochs = 50;
  int batch = 2;
  double lr = 1e-4;
  /// Multiplies the learning rate after every epoch.
  double lr_decay = 1.0;
  std::uint64_t seed = 0;
  double eta = 0.01;
  double eta_i = 1.0;
  std::vector<double> mu{0.5, 0.5};
  WeightInit init = WeightInit::scaled_identity;
  /// Min-max scale each p_0 to [0, 1] before training.
  bool normalize_targets = true;

  void validate(int bands) const;
  nlohmann::json to_json() const;
};

struct TrainHistory {
  /// Mean loss over the samples visited in each epoch.
  std::vector<double> train_loss;
  /// Mean loss over the validation set after each epoch; empty without one.
  std::vector<double> val_loss;
  long steps = 0;
};

/// Minibatch Adam on the mean loss. The sinogram scale c is the largest
/// |p_d| over the training set; the loss is evaluated with A / c and p_d / c.
/// `op` is the nominal operator shared by all samples. Batch order comes from
/// the shuffle stream of `seed`, so results depend only on the inputs.
/// Throws TrainingDiverged on a non-finite loss.
TrainHistory train_model(LinearBandModel &model, const std::vector<TrainingSample> &train,
                         const std::vector<TrainingSample> &val, const SparseOperator &op,
                         const BandFilterBank &bank, const TrainConfig &cfg);

/// Mean per-sample loss of the model's outputs, in the model's scaled units.
double mean_model_loss(const LinearBandModel &model, const std::vector<TrainingSample> &samples,
                       const SparseOperator &op, const BandFilterBank &bank, double eta,
                       double eta_i, std::span<const double> mu, bool normalize_targets);

/// Writes W_1.oat .. W_n.oat and model.json into `dir`.
void save_model(const LinearBandModel &model, const std::filesystem::path &dir);
LinearBandModel load_model(const std::filesystem::path &dir);

} // namespace oat
