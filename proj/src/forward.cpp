#include "oat/forward.hpp"

#include "oat/config.hpp"
#include "oat/errors.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"
#include "oat/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace oat {

void CsrMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols || y.size() != rows)
    throw InvalidArgument("csr multiply: dimension mismatch");
  parallel_for(static_cast<std::ptrdiff_t>(rows), [&](std::ptrdiff_t r) {
    double acc = 0.0;
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p)
      acc += values[p] * x[indices[p]];
    y[r] = acc;
  });
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.offsets.assign(cols + 1, 0);
  for (auto c : indices)
    ++t.offsets[c + 1];
  std::partial_sum(t.offsets.begin(), t.offsets.end(), t.offsets.begin());
  t.indices.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> next(t.offsets.begin(), t.offsets.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p) {
      const std::size_t q = next[indices[p]]++;
      t.indices[q] = static_cast<std::uint32_t>(r);
      t.values[q] = values[p];
    }
  }
  return t;
}

void CsrMatrix::check() const {
  if (offsets.size() != rows + 1 || offsets.front() != 0 || offsets.back() != nnz() ||
      indices.size() != nnz())
    throw InvalidArgument("csr: inconsistent offsets");
  for (std::size_t r = 0; r < rows; ++r) {
    if (offsets[r + 1] < offsets[r])
      throw InvalidArgument("csr: offsets not monotone");
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p) {
      if (indices[p] >= cols)
        throw InvalidArgument("csr: column index out of range");
      if (p > offsets[r] && indices[p] <= indices[p - 1])
        throw InvalidArgument("csr: column indices not sorted and unique");
      if (!std::isfinite(values[p]))
        throw InvalidArgument("csr: non-finite value");
    }
  }
}

SparseOperator::SparseOperator(CsrMatrix shell, const ImagingGrid &grid, int n_d, int n_t,
                               double dt, double v_s, std::uint64_t sensor_fingerprint,
                               std::size_t dropped)
    : shell_(std::move(shell)), grid_(grid), n_d_(n_d), n_t_(n_t), dt_(dt), v_s_(v_s),
      sensor_fp_(sensor_fingerprint), dropped_(dropped) {
  if (shell_.rows != static_cast<std::size_t>(n_d) * static_cast<std::size_t>(n_t) ||
      shell_.cols != grid.size())
    throw InvalidArgument("operator shape does not match grid and sensor/time dimensions");
  shell_.check();
  shell_t_ = shell_.transpose();
}

void SparseOperator::forward(std::span<const double> x, std::span<double> y) const {
  std::vector<double> tmp(rows());
  shell_.multiply(x, tmp);
  apply_time_derivative(n_d_, n_t_, tmp, y);
}

void SparseOperator::adjoint(std::span<const double> y, std::span<double> x) const {
  std::vector<double> tmp(rows());
  apply_time_derivative_transpose(n_d_, n_t_, y, tmp);
  shell_t_.multiply(tmp, x);
}

SparseOperator SparseOperator::scaled(double factor) const {
  CsrMatrix s = shell_;
  for (auto &v : s.values)
    v *= factor;
  return SparseOperator(std::move(s), grid_, n_d_, n_t_, dt_, v_s_, sensor_fp_, dropped_);
}

namespace {

struct Entry {
  std::uint32_t k;
  std::uint32_t j;
  double v;
};

// Builds the CSR block of one sensor (rows l*n_t .. l*n_t + n_t - 1) from a
// list of its sub-element positions; entries are averaged over elements.
struct SensorBlock {
  std::vector<std::size_t> row_counts;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  std::size_t dropped = 0;
};

SensorBlock assemble_block(const std::vector<Vec2> &pixels, std::span<const Vec2> elements,
                           double prefactor, double v_s, double dt, int n_t, double min_dist) {
  SensorBlock block;
  std::vector<Entry> entries;
  entries.reserve(pixels.size() * elements.size());
  const double weight = prefactor / static_cast<double>(elements.size());
  for (const Vec2 &e : elements) {
    for (std::size_t j = 0; j < pixels.size(); ++j) {
      const double dist = norm(e - pixels[j]);
      if (dist < min_dist)
        throw GeometryError("pixel " + std::to_string(j) + " coincides with a sensor");
      const double k = std::floor(dist / (v_s * dt) + 0.5);
      if (k >= n_t) {
        ++block.dropped;
        continue;
      }
      entries.push_back({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(j), weight / dist});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry &a, const Entry &b) { return a.k != b.k ? a.k < b.k : a.j < b.j; });

  block.row_counts.assign(n_t, 0);
  block.indices.reserve(entries.size());
  block.values.reserve(entries.size());
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const Entry &en = entries[p];
    if (p > 0 && entries[p - 1].k == en.k && entries[p - 1].j == en.j) {
      block.values.back() += en.v;
      continue;
    }
    ++block.row_counts[en.k];
    block.indices.push_back(en.j);
    block.values.push_back(en.v);
  }
  return block;
}

SparseOperator assemble(const ImagingGrid &grid, const SensorArray &sensors,
                        const std::vector<std::vector<Vec2>> &elements, double v_s, double dt,
                        int n_t) {
  if (!(v_s > 0.0))
    throw InvalidArgument("speed of sound must be positive");
  if (!(dt > 0.0))
    throw InvalidArgument("dt must be positive");
  if (n_t < 1)
    throw InvalidArgument("n_t must be >= 1");
  const auto n_d = static_cast<int>(elements.size());

  std::vector<Vec2> pixels(grid.size());
  for (std::size_t j = 0; j < pixels.size(); ++j)
    pixels[j] = pixel_center(grid, j);

  const double prefactor =
      grid.voxel_volume() / (4.0 * std::numbers::pi * v_s * v_s * dt * dt);
  const double min_dist = 1e-9 * grid.dx();

  std::vector<SensorBlock> blocks(n_d);
  std::vector<std::string> failures(n_d);
  parallel_for(n_d, [&](std::ptrdiff_t l) {
    try {
      blocks[l] = assemble_block(pixels, elements[l], prefactor, v_s, dt, n_t, min_dist);
    } catch (const GeometryError &e) {
      failures[l] = e.what();
    }
  });
  for (int l = 0; l < n_d; ++l)
    if (!failures[l].empty())
      throw GeometryError("sensor " + std::to_string(l) + ": " + failures[l]);

  CsrMatrix m;
  m.rows = static_cast<std::size_t>(n_d) * n_t;
  m.cols = grid.size();
  m.offsets.reserve(m.rows + 1);
  std::size_t dropped = 0;
  for (auto &b : blocks) {
    for (auto c : b.row_counts)
      m.offsets.push_back(m.offsets.back() + c);
    m.indices.insert(m.indices.end(), b.indices.begin(), b.indices.end());
    m.values.insert(m.values.end(), b.values.begin(), b.values.end());
    dropped += b.dropped;
  }
  return SparseOperator(std::move(m), grid, n_d, n_t, dt, v_s, sensors.fingerprint(), dropped);
}

} // namespace

SparseOperator assemble_shell_matrix(const ImagingGrid &grid, const SensorArray &sensors,
                                     double v_s, double dt, int n_t) {
  if (sensors.positions.empty())
    throw InvalidArgument("sensor array is empty");
  std::vector<std::vector<Vec2>> elements;
  elements.reserve(sensors.size());
  for (const auto &p : sensors.positions)
    elements.push_back({p});
  return assemble(grid, sensors, elements, v_s, dt, n_t);
}

SparseOperator assemble_finite_sensor(const ImagingGrid &grid, const SensorArray &sensors,
                                      double element_length, int n_sub, double v_s, double dt,
                                      int n_t) {
  if (n_sub < 1)
    throw InvalidArgument("n_sub must be >= 1");
  if (!(element_length >= 0.0))
    throw InvalidArgument("element length must be non-negative");
  if (sensors.positions.empty())
    throw InvalidArgument("sensor array is empty");

  std::vector<std::vector<Vec2>> elements(sensors.size());
  for (std::size_t l = 0; l < sensors.size(); ++l) {
    const Vec2 p = sensors.positions[l];
    const Vec2 radial = p - sensors.center;
    const double r = norm(radial);
    // Degenerate array (sensor at its own center): fall back to the x axis.
    const Vec2 tangent = r > 0.0 ? Vec2{-radial.y / r, radial.x / r} : Vec2{1.0, 0.0};
    for (int s = 0; s < n_sub; ++s) {
      const double offset = element_length * ((s + 0.5) / n_sub - 0.5);
      const Vec2 e = p + offset * tangent;
      if (grid.contains(e))
        throw GeometryError("sub-element " + std::to_string(s) + " of sensor " +
                            std::to_string(l) + " lies inside the grid");
      elements[l].push_back(e);
    }
  }
  return assemble(grid, sensors, elements, v_s, dt, n_t);
}

void apply_time_derivative(int n_d, int n_t, std::span<const double> in, std::span<double> out) {
  const auto total = static_cast<std::size_t>(n_d) * static_cast<std::size_t>(n_t);
  if (in.size() != total || out.size() != total)
    throw InvalidArgument("time derivative: shape mismatch");
  parallel_for(n_d, [&](std::ptrdiff_t l) {
    const double *u = in.data() + l * n_t;
    double *y = out.data() + l * n_t;
    if (n_t == 1) {
      y[0] = 0.0;
      return;
    }
    y[0] = u[1] - u[0];
    for (int k = 1; k + 1 < n_t; ++k)
      y[k] = 0.5 * (u[k + 1] - u[k - 1]);
    y[n_t - 1] = u[n_t - 1] - u[n_t - 2];
  });
}

void apply_time_derivative_transpose(int n_d, int n_t, std::span<const double> in,
                                     std::span<double> out) {
  const auto total = static_cast<std::size_t>(n_d) * static_cast<std::size_t>(n_t);
  if (in.size() != total || out.size() != total)
    throw InvalidArgument("time derivative transpose: shape mismatch");
  parallel_for(n_d, [&](std::ptrdiff_t l) {
    const double *y = in.data() + l * n_t;
    double *x = out.data() + l * n_t;
    std::fill(x, x + n_t, 0.0);
    if (n_t == 1)
      return;
    x[0] -= y[0];
    x[1] += y[0];
    for (int k = 1; k + 1 < n_t; ++k) {
      x[k - 1] -= 0.5 * y[k];
      x[k + 1] += 0.5 * y[k];
    }
    x[n_t - 2] -= y[n_t - 1];
    x[n_t - 1] += y[n_t - 1];
  });
}

Sinogram apply_time_derivative(const Sinogram &s) {
  Sinogram out(s.n_d, s.n_t, s.dt, s.t0);
  apply_time_derivative(s.n_d, s.n_t, s.data, out.data);
  return out;
}

Sinogram forward_apply(const SparseOperator &op, const Image &p0) {
  if (p0.grid.fingerprint() != op.grid().fingerprint())
    throw InvalidArgument("image grid does not match operator grid");
  Sinogram out(op.n_d(), op.n_t(), op.dt());
  op.forward(p0.data, out.data);
  return out;
}

Image adjoint_apply(const SparseOperator &op, const Sinogram &pd) {
  if (pd.n_d != op.n_d() || pd.n_t != op.n_t() || pd.data.size() != op.rows())
    throw InvalidArgument("sinogram shape does not match operator");
  Image out(op.grid());
  op.adjoint(pd.data, out.data);
  return out;
}

Eigen::MatrixXd materialize_dense(const SparseOperator &op) {
  const auto &s = op.shell();
  Eigen::MatrixXd shell = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.rows),
                                                static_cast<Eigen::Index>(s.cols));
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t p = s.offsets[r]; p < s.offsets[r + 1]; ++p)
      shell(static_cast<Eigen::Index>(r), s.indices[p]) = s.values[p];
  Eigen::MatrixXd a(shell.rows(), shell.cols());
  for (Eigen::Index c = 0; c < shell.cols(); ++c)
    apply_time_derivative(op.n_d(), op.n_t(), std::span<const double>(shell.col(c).data(), shell.rows()),
                          std::span<double>(a.col(c).data(), a.rows()));
  return a;
}

namespace {

// Entry (i, k) of the n x n derivative stencil matrix.
double stencil_entry(int i, int k, int n) {
  if (n == 1)
    return 0.0;
  if (i == 0)
    return k == 0 ? -1.0 : (k == 1 ? 1.0 : 0.0);
  if (i == n - 1)
    return k == n - 1 ? 1.0 : (k == n - 2 ? -1.0 : 0.0);
  return k == i + 1 ? 0.5 : (k == i - 1 ? -0.5 : 0.0);
}

} // namespace

double frobenius_norm(const SparseOperator &op) {
  const auto &st = op.shell_transpose();
  const int n_t = op.n_t();
  std::vector<double> col(op.rows(), 0.0);
  std::vector<std::uint32_t> touched;
  double sum = 0.0;
  for (std::size_t c = 0; c < st.rows; ++c) {
    touched.clear();
    // Column c of A is D applied to column c of the shell matrix; D only mixes
    // samples of one channel, and column k of D is nonzero in rows
    // {0, k-1, k+1, n_t-1} at most.
    for (std::size_t p = st.offsets[c]; p < st.offsets[c + 1]; ++p) {
      const std::uint32_t r = st.indices[p];
      const int k = static_cast<int>(r % static_cast<std::uint32_t>(n_t));
      const std::uint32_t base = r - static_cast<std::uint32_t>(k);
      int rows[4] = {0, k - 1, k + 1, n_t - 1};
      std::sort(rows, rows + 4);
      for (int q = 0; q < 4; ++q) {
        const int i = rows[q];
        if (i < 0 || i >= n_t || (q > 0 && rows[q - 1] == i))
          continue;
        const double w = stencil_entry(i, k, n_t);
        if (w == 0.0)
          continue;
        touched.push_back(base + static_cast<std::uint32_t>(i));
        col[base + i] += w * st.values[p];
      }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto rr : touched) {
      sum += col[rr] * col[rr];
      col[rr] = 0.0;
    }
  }
  return std::sqrt(sum);
}

Perturbation draw_perturbation(const ExperimentConfig &cfg, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Perturbation p;
  p.v_s = cfg.v_s + rng.uniform(-cfg.vs_jitter, cfg.vs_jitter);
  p.sensors = cfg.sensors;
  const double a = cfg.pos_jitter_frac * cfg.sensors.nominal_radius;
  for (auto &pos : p.sensors.positions) {
    const Vec2 radial = pos - cfg.sensors.center;
    const double r = norm(radial);
    const Vec2 ur = r > 0.0 ? (1.0 / r) * radial : Vec2{1.0, 0.0};
    const Vec2 ut{-ur.y, ur.x};
    const double dr = rng.uniform(-a, a);
    const double dtan = rng.uniform(-a, a);
    pos = pos + dr * ur + dtan * ut;
  }
  return p;
}

PerturbedSystem perturbed_system(const ExperimentConfig &cfg, std::uint64_t seed) {
  Perturbation p = draw_perturbation(cfg, seed);
  SparseOperator op = assemble_shell_matrix(cfg.grid, p.sensors, p.v_s, cfg.dt, cfg.n_t);
  return {std::move(op), std::move(p.sensors), p.v_s};
}

SparseOperator nominal_operator(const ExperimentConfig &cfg) {
  return assemble_shell_matrix(cfg.grid, cfg.sensors, cfg.v_s, cfg.dt, cfg.n_t);
}

void export_operator(const SparseOperator &op, const std::filesystem::path &prefix) {
  const auto &s = op.shell();
  constexpr std::size_t exact_limit = std::size_t{1} << 24;
  if (s.nnz() >= exact_limit || s.rows >= exact_limit || s.cols >= exact_limit)
    throw InvalidArgument("operator too large for float32 index export");
  auto with = [&](const char *suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  std::vector<double> offsets(s.offsets.begin(), s.offsets.end());
  std::vector<double> indices(s.indices.begin(), s.indices.end());
  const std::uint32_t off_shape[1] = {static_cast<std::uint32_t>(offsets.size())};
  const std::uint32_t nnz_shape[1] = {static_cast<std::uint32_t>(s.nnz())};
  write_tensor(with("_offsets.oat"), off_shape, offsets);
  write_tensor(with("_indices.oat"), nnz_shape, indices);
  write_tensor(with("_values.oat"), nnz_shape, s.values);

  const auto &g = op.grid();
  nlohmann::json meta = {
      {"format_version", 1},
      {"factor", "shell; full operator applies the time-derivative stencil per channel"},
      {"rows", s.rows},
      {"cols", s.cols},
      {"nnz", s.nnz()},
      {"n_d", op.n_d()},
      {"n_t", op.n_t()},
      {"dt_s", op.dt()},
      {"vs_mps", op.v_s()},
      {"grid",
       {{"nx", g.nx()},
        {"ny", g.ny()},
        {"dx_m", g.dx()},
        {"slice_thickness_m", g.slice_thickness()},
        {"origin_m", {g.origin().x, g.origin().y}}}},
      {"grid_fingerprint", g.fingerprint()},
      {"sensor_fingerprint", op.sensor_fingerprint()},
      {"dropped_arrivals", op.dropped_arrivals()},
  };
  write_file_atomic(with(".json"), meta.dump(2) + "\n");
}

SparseOperator import_operator(const std::filesystem::path &prefix) {
  auto with = [&](const char *suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  std::ifstream in(with(".json"));
  if (!in)
    throw IoError("cannot open " + with(".json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
    const auto &g = meta.at("grid");
    const auto origin = g.at("origin_m").get<std::vector<double>>();
    ImagingGrid grid(g.at("nx").get<int>(), g.at("ny").get<int>(), g.at("dx_m").get<double>(),
                     {origin.at(0), origin.at(1)}, g.at("slice_thickness_m").get<double>());
    CsrMatrix m;
    m.rows = meta.at("rows").get<std::size_t>();
    m.cols = meta.at("cols").get<std::size_t>();
    const Tensor off = read_tensor(with("_offsets.oat"));
    const Tensor idx = read_tensor(with("_indices.oat"));
    Tensor val = read_tensor(with("_values.oat"));
    m.offsets.assign(off.data.begin(), off.data.end());
    m.indices.assign(idx.data.begin(), idx.data.end());
    m.values = std::move(val.data);
    return SparseOperator(std::move(m), grid, meta.at("n_d").get<int>(), meta.at("n_t").get<int>(),
                          meta.at("dt_s").get<double>(), meta.at("vs_mps").get<double>(),
                          meta.at("sensor_fingerprint").get<std::uint64_t>(),
                          meta.at("dropped_arrivals").get<std::size_t>());
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(with(".json").string() + ": " + e.what());
  } catch (const InvalidArgument &e) {
    throw FormatError(prefix.string() + ": " + e.what());
  }
}

} // namespace oat
