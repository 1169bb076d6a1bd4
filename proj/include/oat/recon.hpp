#pragma once

#include "oat/core.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"

#include <span>
#include <vector>

namespace oat {

enum class StepMode { fixed, inverse_lipschitz };

struct SolverOptions {
  int max_iters = 2000;
  /// fbMB: relative objective change; LSQR: relative residual / normal-equation test.
  double rel_tol = 1e-6;
  StepMode step_mode = StepMode::inverse_lipschitz;
  /// Used when step_mode == fixed.
  double fixed_step = 0.0;
  int lipschitz_power_iters = 30;
  /// FISTA momentum, restarted whenever the objective would increase.
  bool accelerate = true;
  bool record_trace = true;
  /// Projection onto x >= 0. Disabling it is a test mode (unconstrained fbMB).
  bool nonnegative = true;

  void validate() const;
};

/// Delay-and-sum: pixel j = sum_l p_d(l, tau_lj), tau_lj = |r_dl - r_j| / v_s,
/// sampled by linear interpolation and zero outside the record.
Image das(const Sinogram &pd, const ImagingGrid &grid, const SensorArray &sensors, double v_s);

/// Universal back-projection with uniform 1/N_d weights:
/// pixel j = (1/N_d) sum_l b_l(tau_lj), b = 2 p - 2 t dp/dt.
Image ubp(const Sinogram &pd, const ImagingGrid &grid, const SensorArray &sensors, double v_s);

/// Linear back-projection A^T p_d; same result as adjoint_apply.
Image lbp(const SparseOperator &op, const Sinogram &pd);

/// trace(A^T A) / N = ||A||_F^2 / N, the natural unit for lambda.
double trace_scale(const SparseOperator &op);

/// (A^T A + lambda I)^{-1} A^T p_d by dense Cholesky. Requires N <= 4096.
/// Throws SingularSystem when the normal matrix is numerically singular.
Image tikhonov_direct(const SparseOperator &op, const Sinogram &pd, double lambda);

struct LsqrResult {
  Image image;
  bool converged = false;
  int iterations = 0;
  /// Estimated damped residual ||[p_d - A x; sqrt(lambda) x]|| per iteration.
  std::vector<double> residual_trace;
};

/// LSQR on min ||A x - p_d||^2 + lambda ||x||^2 (damping sqrt(lambda)).
/// Non-convergence returns the last iterate with converged = false.
LsqrResult tikhonov_lsqr(const SparseOperator &op, const Sinogram &pd, double lambda,
                         const SolverOptions &opts);

/// Power-iteration estimate of the largest eigenvalue of Q, the matrix of the
/// fbMB quadratic form over the stacked components:
///   (Q x)_k = (A^T A + lambda I) s + eta mu_k A^T F_k F_k A x_k,  s = sum_k x_k.
/// Returns 1.05 times the Rayleigh quotient. The objective's gradient has
/// Lipschitz constant 2 * lambda_max(Q).
double estimate_lipschitz(const SparseOperator &op, const BandFilterBank &bank, double lambda,
                          double eta, std::span<const double> mu, int power_iters);

struct FbmbResult {
  std::vector<Image> components;
  Image total;
  std::vector<double> objective_trace;
  int iterations_used = 0;
  bool converged = false;
  double step = 0.0;
};

/// ||p_d - A s||^2 + lambda ||s||^2 + eta sum_k mu_k ||F_k A x_k||^2.
double fbmb_objective(const SparseOperator &op, const Sinogram &pd, const BandFilterBank &bank,
                      double lambda, double eta, std::span<const double> mu,
                      const std::vector<Image> &components);

/// Frequency-band model-based reconstruction by projected gradient descent
/// (optionally FISTA) from x_k = 0 with step 1 / (2 L), L from
/// estimate_lipschitz. Steps that would raise the objective are rejected and
/// retried without momentum, so the recorded trace never increases.
FbmbResult fbmb_solve(const SparseOperator &op, const Sinogram &pd, const BandFilterBank &bank,
                      double lambda, double eta, std::span<const double> mu,
                      const SolverOptions &opts = {});

} // namespace oat
