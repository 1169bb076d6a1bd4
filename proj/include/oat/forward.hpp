#pragma once

#include "oat/core.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace oat {

struct ExperimentConfig;

/// Compressed sparse row matrix with sorted, unique column indices per row.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t nnz() const noexcept { return values.size(); }
  /// y = M x. Rows are independent, so the result does not depend on threading.
  void multiply(std::span<const double> x, std::span<double> y) const;
  CsrMatrix transpose() const;
  /// Throws InvalidArgument if offsets/indices break the CSR invariants.
  void check() const;
};

/// The discretized model matrix A = D * S, where S is the spherical-shell
/// (delta-arrival) matrix for point sensors and D the per-channel time
/// derivative stencil. Rows are ordered sensor-major: row = l * n_t + k.
class SparseOperator {
public:
  SparseOperator(CsrMatrix shell, const ImagingGrid &grid, int n_d, int n_t, double dt,
                 double v_s, std::uint64_t sensor_fingerprint, std::size_t dropped = 0);

  const CsrMatrix &shell() const noexcept { return shell_; }
  const CsrMatrix &shell_transpose() const noexcept { return shell_t_; }
  const ImagingGrid &grid() const noexcept { return grid_; }
  int n_d() const noexcept { return n_d_; }
  int n_t() const noexcept { return n_t_; }
  double dt() const noexcept { return dt_; }
  double v_s() const noexcept { return v_s_; }
  std::size_t rows() const noexcept { return shell_.rows; }
  std::size_t cols() const noexcept { return shell_.cols; }
  std::uint64_t sensor_fingerprint() const noexcept { return sensor_fp_; }
  /// Number of (sensor, pixel) arrivals that fell after the last time sample.
  std::size_t dropped_arrivals() const noexcept { return dropped_; }

  /// y = A x on raw buffers (x has cols() entries, y has rows()).
  void forward(std::span<const double> x, std::span<double> y) const;
  /// x = A^T y on raw buffers.
  void adjoint(std::span<const double> y, std::span<double> x) const;

  /// Copy with every shell entry multiplied by `factor`.
  SparseOperator scaled(double factor) const;

private:
  CsrMatrix shell_;
  CsrMatrix shell_t_;
  ImagingGrid grid_;
  int n_d_;
  int n_t_;
  double dt_;
  double v_s_;
  std::uint64_t sensor_fp_;
  std::size_t dropped_;
};

/// Shell matrix entry for (sensor l, time k, pixel j):
///   dV / (4 pi v_s^2 dt^2) / |r_dl - r_j|   at k = floor(|r_dl - r_j| / (v_s dt) + 1/2),
/// so each (sensor, pixel) pair lands in exactly one time bin. Arrivals at
/// k >= n_t are dropped and counted in dropped_arrivals().
SparseOperator assemble_shell_matrix(const ImagingGrid &grid, const SensorArray &sensors,
                                     double v_s, double dt, int n_t);

/// Finite-size sensors: each sensor is replaced by n_sub point elements spread
/// uniformly over a segment of `element_length` tangent to the array circle,
/// and its rows are the average of the element rows.
SparseOperator assemble_finite_sensor(const ImagingGrid &grid, const SensorArray &sensors,
                                      double element_length, int n_sub, double v_s, double dt,
                                      int n_t);

/// Per-channel derivative stencil: (u[k+1] - u[k-1]) / 2 in the interior,
/// one-sided first differences at both ends. Dimensionless; the 1/dt factors
/// live in the shell matrix prefactor.
void apply_time_derivative(int n_d, int n_t, std::span<const double> in, std::span<double> out);
/// Exact transpose of apply_time_derivative.
void apply_time_derivative_transpose(int n_d, int n_t, std::span<const double> in,
                                     std::span<double> out);

Sinogram apply_time_derivative(const Sinogram &s);

/// p_d = A p0. Throws InvalidArgument when p0's grid differs from the operator's.
Sinogram forward_apply(const SparseOperator &op, const Image &p0);
/// A^T p_d, the linear back-projection image.
Image adjoint_apply(const SparseOperator &op, const Sinogram &pd);

/// Dense A (rows x cols).
Eigen::MatrixXd materialize_dense(const SparseOperator &op);
/// Frobenius norm of A computed column by column from the sparse factors.
double frobenius_norm(const SparseOperator &op);

struct Perturbation {
  double v_s = 0.0;
  SensorArray sensors;
};

/// v_s ~ U(v_s +- vs_jitter); each sensor moved radially and tangentially by
/// independent U(+-pos_jitter_frac * radius) offsets. Pure function of seed.
Perturbation draw_perturbation(const ExperimentConfig &cfg, std::uint64_t seed);

struct PerturbedSystem {
  SparseOperator op;
  SensorArray sensors;
  double v_s_used;
};

PerturbedSystem perturbed_system(const ExperimentConfig &cfg, std::uint64_t seed);

/// Nominal operator of a configuration.
SparseOperator nominal_operator(const ExperimentConfig &cfg);

/// Writes <prefix>_offsets.oat, <prefix>_indices.oat, <prefix>_values.oat and
/// <prefix>.json. Index tensors are stored as float32 and must stay below 2^24.
void export_operator(const SparseOperator &op, const std::filesystem::path &prefix);
SparseOperator import_operator(const std::filesystem::path &prefix);

} // namespace oat
