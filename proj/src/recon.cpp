#include "oat/recon.hpp"

#include "oat/errors.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <limits>
#include <string>

namespace oat {

namespace {

using Vec = Eigen::VectorXd;

std::span<const double> cspan(const Vec &v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<double> mspan(Vec &v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Vec apply_a(const SparseOperator &op, const Vec &x) {
  Vec y(static_cast<Eigen::Index>(op.rows()));
  op.forward(cspan(x), mspan(y));
  return y;
}

Vec apply_at(const SparseOperator &op, const Vec &y) {
  Vec x(static_cast<Eigen::Index>(op.cols()));
  op.adjoint(cspan(y), mspan(x));
  return x;
}

Vec apply_reject(const BandFilterBank &bank, int k, const SparseOperator &op, const Vec &u) {
  Vec out(u.size());
  bank.apply(k, FilterVariant::reject, op.n_d(), op.n_t(), cspan(u), mspan(out));
  return out;
}

void check_shapes(const SparseOperator &op, const Sinogram &pd) {
  if (pd.n_d != op.n_d() || pd.n_t != op.n_t() || pd.data.size() != op.rows())
    throw InvalidArgument("sinogram shape does not match operator");
}

void check_bank(const SparseOperator &op, const BandFilterBank &bank, std::span<const double> mu) {
  if (bank.count() < 1)
    throw InvalidArgument("filter bank has no bands");
  if (static_cast<int>(mu.size()) != bank.count())
    throw InvalidArgument("mu must have one weight per band");
  for (double m : mu)
    if (!(m >= 0.0))
      throw InvalidArgument("band weights must be non-negative");
  if (bank.path != FilterPath::strict)
    throw UnsupportedMode("band penalties require the strict filter path");
  if (std::abs(bank.fs * op.dt() - 1.0) > 1e-9)
    throw InvalidArgument("filter bank sampling rate does not match operator dt");
}

// Samples channel l at fractional index s; zero outside [0, n_t - 1].
double sample_linear(std::span<const double> ch, double s) {
  const auto n = static_cast<double>(ch.size());
  if (!(s >= 0.0) || s > n - 1.0)
    return 0.0;
  const auto i = static_cast<std::size_t>(s);
  if (i + 1 >= ch.size())
    return ch[i];
  const double f = s - static_cast<double>(i);
  return (1.0 - f) * ch[i] + f * ch[i + 1];
}

Image back_project(const Sinogram &signals, const ImagingGrid &grid, const SensorArray &sensors,
                   double v_s, double weight) {
  if (static_cast<std::size_t>(signals.n_d) != sensors.size())
    throw InvalidArgument("sinogram channel count does not match sensor count");
  if (!(v_s > 0.0))
    throw InvalidArgument("speed of sound must be positive");
  Image out(grid);
  parallel_for(static_cast<std::ptrdiff_t>(grid.size()), [&](std::ptrdiff_t j) {
    const Vec2 r = pixel_center(grid, static_cast<std::size_t>(j));
    double acc = 0.0;
    for (int l = 0; l < signals.n_d; ++l) {
      const double tau = norm(sensors.positions[l] - r) / v_s;
      acc += sample_linear(signals.channel(l), (tau - signals.t0) / signals.dt);
    }
    out.data[j] = weight * acc;
  });
  return out;
}

} // namespace

void SolverOptions::validate() const {
  if (max_iters < 1)
    throw InvalidArgument("max_iters must be >= 1");
  if (!(rel_tol > 0.0))
    throw InvalidArgument("rel_tol must be positive");
  if (step_mode == StepMode::fixed && !(fixed_step > 0.0))
    throw InvalidArgument("fixed step mode needs a positive fixed_step");
  if (step_mode == StepMode::inverse_lipschitz && lipschitz_power_iters < 5)
    throw InvalidArgument("lipschitz_power_iters must be >= 5");
}

Image das(const Sinogram &pd, const ImagingGrid &grid, const SensorArray &sensors, double v_s) {
  pd.validate();
  return back_project(pd, grid, sensors, v_s, 1.0);
}

Image ubp(const Sinogram &pd, const ImagingGrid &grid, const SensorArray &sensors, double v_s) {
  pd.validate();
  Sinogram b(pd.n_d, pd.n_t, pd.dt, pd.t0);
  const int n = pd.n_t;
  for (int l = 0; l < pd.n_d; ++l) {
    const auto p = pd.channel(l);
    auto out = b.channel(l);
    for (int k = 0; k < n; ++k) {
      double dp = 0.0;
      if (n > 1) {
        if (k == 0)
          dp = (p[1] - p[0]) / pd.dt;
        else if (k == n - 1)
          dp = (p[n - 1] - p[n - 2]) / pd.dt;
        else
          dp = (p[k + 1] - p[k - 1]) / (2.0 * pd.dt);
      }
      const double t = pd.t0 + k * pd.dt;
      out[k] = 2.0 * p[k] - 2.0 * t * dp;
    }
  }
  return back_project(b, grid, sensors, v_s, 1.0 / pd.n_d);
}

Image lbp(const SparseOperator &op, const Sinogram &pd) { return adjoint_apply(op, pd); }

double trace_scale(const SparseOperator &op) {
  const double f = frobenius_norm(op);
  return f * f / static_cast<double>(op.cols());
}

Image tikhonov_direct(const SparseOperator &op, const Sinogram &pd, double lambda) {
  check_shapes(op, pd);
  if (!(lambda >= 0.0))
    throw InvalidArgument("lambda must be >= 0");
  const auto n = static_cast<Eigen::Index>(op.cols());
  if (n > 4096)
    throw InvalidArgument("tikhonov_direct is limited to N <= 4096 pixels; use tikhonov_lsqr");

  using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(op.rows());
  const auto &s = op.shell();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(s.nnz());
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t p = s.offsets[r]; p < s.offsets[r + 1]; ++p)
      trip.emplace_back(static_cast<Eigen::Index>(r), s.indices[p], s.values[p]);
  Sparse shell(rows, n);
  shell.setFromTriplets(trip.begin(), trip.end());

  // Time-derivative stencil as a block-diagonal sparse matrix.
  trip.clear();
  const int nt = op.n_t();
  for (int l = 0; l < op.n_d(); ++l) {
    const Eigen::Index base = static_cast<Eigen::Index>(l) * nt;
    if (nt == 1)
      continue;
    trip.emplace_back(base, base, -1.0);
    trip.emplace_back(base, base + 1, 1.0);
    for (int k = 1; k + 1 < nt; ++k) {
      trip.emplace_back(base + k, base + k - 1, -0.5);
      trip.emplace_back(base + k, base + k + 1, 0.5);
    }
    trip.emplace_back(base + nt - 1, base + nt - 2, -1.0);
    trip.emplace_back(base + nt - 1, base + nt - 1, 1.0);
  }
  Sparse deriv(rows, rows);
  deriv.setFromTriplets(trip.begin(), trip.end());

  const Sparse a = deriv * shell;
  Eigen::MatrixXd normal = Eigen::MatrixXd(Sparse(a.transpose() * a));
  normal.diagonal().array() += lambda;
  const Eigen::Map<const Vec> b(pd.data.data(), rows);
  const Vec rhs = a.transpose() * b;

  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  const double singular_rcond = static_cast<double>(n) * std::numeric_limits<double>::epsilon();
  if (llt.info() != Eigen::Success || llt.rcond() < singular_rcond)
    throw SingularSystem("normal matrix A^T A + lambda I is singular" +
                         std::string(lambda == 0.0 ? "; use lambda > 0" : ""));
  const Vec x = llt.solve(rhs);
  return Image(op.grid(), std::vector<double>(x.data(), x.data() + x.size()));
}

LsqrResult tikhonov_lsqr(const SparseOperator &op, const Sinogram &pd, double lambda,
                         const SolverOptions &opts) {
  check_shapes(op, pd);
  if (!(lambda >= 0.0))
    throw InvalidArgument("lambda must be >= 0");
  opts.validate();

  const double damp = std::sqrt(lambda);
  const auto n = static_cast<Eigen::Index>(op.cols());
  Vec x = Vec::Zero(n);
  Vec u = Eigen::Map<const Vec>(pd.data.data(), static_cast<Eigen::Index>(pd.data.size()));
  LsqrResult res{Image(op.grid()), false, 0, {}};

  double beta = u.norm();
  const double bnorm = beta;
  if (beta == 0.0) {
    res.converged = true;
    return res;
  }
  u /= beta;
  Vec v = apply_at(op, u);
  double alpha = v.norm();
  if (alpha == 0.0) {
    res.converged = true;
    return res;
  }
  v /= alpha;
  Vec w = v;

  double rhobar = alpha, phibar = beta;
  double anorm_sq = 0.0, res2 = 0.0;
  for (int it = 1; it <= opts.max_iters; ++it) {
    u = apply_a(op, v) - alpha * u;
    beta = u.norm();
    if (beta > 0.0)
      u /= beta;
    anorm_sq += alpha * alpha + beta * beta + lambda;
    v = apply_at(op, u) - beta * v;
    alpha = v.norm();
    if (alpha > 0.0)
      v /= alpha;

    // Rotation eliminating the damping term.
    const double rhobar1 = std::hypot(rhobar, damp);
    const double cs1 = rhobar / rhobar1;
    const double sn1 = damp / rhobar1;
    const double psi = sn1 * phibar;
    phibar = cs1 * phibar;

    // Rotation eliminating the subdiagonal of the bidiagonal matrix.
    const double rho = std::hypot(rhobar1, beta);
    const double cs = rhobar1 / rho;
    const double sn = beta / rho;
    const double theta = sn * alpha;
    rhobar = -cs * alpha;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    const double tau = sn * phi;

    x += (phi / rho) * w;
    w = v - (theta / rho) * w;

    res2 += psi * psi;
    const double rnorm = std::sqrt(phibar * phibar + res2);
    const double arnorm = alpha * std::abs(tau);
    res.iterations = it;
    if (opts.record_trace)
      res.residual_trace.push_back(rnorm);

    const double test1 = rnorm / bnorm;
    const double test2 = arnorm / (std::sqrt(anorm_sq) * rnorm + std::numeric_limits<double>::min());
    if (test1 <= opts.rel_tol || test2 <= opts.rel_tol || alpha == 0.0) {
      res.converged = true;
      break;
    }
  }
  res.image.data.assign(x.data(), x.data() + x.size());
  return res;
}

namespace {

// Applies Q (see estimate_lipschitz) to the stacked components.
std::vector<Vec> apply_fbmb_quadratic(const SparseOperator &op, const BandFilterBank &bank,
                                      double lambda, double eta, std::span<const double> mu,
                                      const std::vector<Vec> &x) {
  const int n = bank.count();
  Vec s = Vec::Zero(x[0].size());
  for (const auto &xk : x)
    s += xk;
  const Vec common = apply_at(op, apply_a(op, s)) + lambda * s;
  std::vector<Vec> out(n);
  for (int k = 0; k < n; ++k) {
    out[k] = common;
    if (eta * mu[k] != 0.0) {
      const Vec f = apply_reject(bank, k, op, apply_reject(bank, k, op, apply_a(op, x[k])));
      out[k] += eta * mu[k] * apply_at(op, f);
    }
  }
  return out;
}

double stacked_dot(const std::vector<Vec> &a, const std::vector<Vec> &b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    d += a[k].dot(b[k]);
  return d;
}

} // namespace

double estimate_lipschitz(const SparseOperator &op, const BandFilterBank &bank, double lambda,
                          double eta, std::span<const double> mu, int power_iters) {
  check_bank(op, bank, mu);
  if (power_iters < 5)
    throw InvalidArgument("power_iters must be >= 5");
  const int n = bank.count();
  const auto N = static_cast<Eigen::Index>(op.cols());

  SplitMix64 rng(0x9d1f3c5ab0e2a417ULL);
  std::vector<Vec> v(n, Vec(N));
  for (auto &vk : v)
    for (Eigen::Index j = 0; j < N; ++j)
      vk[j] = rng.uniform(0.5, 1.5);
  double nrm = std::sqrt(stacked_dot(v, v));
  for (auto &vk : v)
    vk /= nrm;

  double rayleigh = 0.0;
  for (int it = 0; it < power_iters; ++it) {
    std::vector<Vec> w = apply_fbmb_quadratic(op, bank, lambda, eta, mu, v);
    rayleigh = stacked_dot(v, w);
    nrm = std::sqrt(stacked_dot(w, w));
    if (nrm == 0.0)
      return 0.0;
    for (int k = 0; k < n; ++k)
      v[k] = w[k] / nrm;
  }
  return 1.05 * rayleigh;
}

double fbmb_objective(const SparseOperator &op, const Sinogram &pd, const BandFilterBank &bank,
                      double lambda, double eta, std::span<const double> mu,
                      const std::vector<Image> &components) {
  check_shapes(op, pd);
  check_bank(op, bank, mu);
  if (static_cast<int>(components.size()) != bank.count())
    throw InvalidArgument("need one component per band");
  const auto N = static_cast<Eigen::Index>(op.cols());
  Vec s = Vec::Zero(N);
  Vec resid = Eigen::Map<const Vec>(pd.data.data(), static_cast<Eigen::Index>(pd.data.size()));
  double band = 0.0;
  for (int k = 0; k < bank.count(); ++k) {
    const Vec xk = Eigen::Map<const Vec>(components[k].data.data(), N);
    s += xk;
    const Vec u = apply_a(op, xk);
    resid -= u;
    if (eta * mu[k] != 0.0)
      band += mu[k] * apply_reject(bank, k, op, u).squaredNorm();
  }
  return resid.squaredNorm() + lambda * s.squaredNorm() + eta * band;
}

FbmbResult fbmb_solve(const SparseOperator &op, const Sinogram &pd, const BandFilterBank &bank,
                      double lambda, double eta, std::span<const double> mu,
                      const SolverOptions &opts) {
  check_shapes(op, pd);
  check_bank(op, bank, mu);
  opts.validate();
  if (!(lambda >= 0.0) || !(eta >= 0.0))
    throw InvalidArgument("lambda and eta must be >= 0");

  const int n = bank.count();
  const auto N = static_cast<Eigen::Index>(op.cols());
  const auto M = static_cast<Eigen::Index>(op.rows());
  const Eigen::Map<const Vec> p(pd.data.data(), M);

  double step = opts.fixed_step;
  if (opts.step_mode == StepMode::inverse_lipschitz) {
    const double L = estimate_lipschitz(op, bank, lambda, eta, mu, opts.lipschitz_power_iters);
    if (!(L > 0.0))
      throw Divergence("fbMB: Lipschitz estimate is not positive");
    step = 1.0 / (2.0 * L);
  }

  // Iterate x with cached u_k = A x_k and v_k = F_k A x_k.
  struct State {
    std::vector<Vec> x, u, v;
    double objective = 0.0;
  };
  auto objective_of = [&](const State &st) {
    Vec s = Vec::Zero(N);
    Vec r = p;
    double band = 0.0;
    for (int k = 0; k < n; ++k) {
      s += st.x[k];
      r -= st.u[k];
      band += mu[k] * st.v[k].squaredNorm();
    }
    return r.squaredNorm() + lambda * s.squaredNorm() + eta * band;
  };
  auto finish_state = [&](State &st) {
    for (int k = 0; k < n; ++k) {
      st.u[k] = apply_a(op, st.x[k]);
      st.v[k] = eta * mu[k] != 0.0 ? apply_reject(bank, k, op, st.u[k]) : Vec::Zero(M);
    }
    st.objective = objective_of(st);
  };

  State cur{std::vector<Vec>(n, Vec::Zero(N)), std::vector<Vec>(n, Vec::Zero(M)),
            std::vector<Vec>(n, Vec::Zero(M)), p.squaredNorm()};
  State prev = cur;

  FbmbResult res{{}, Image(op.grid()), {}, 0, false, step};
  res.objective_trace.push_back(cur.objective);

  double t_mom = 1.0;
  for (int it = 1; it <= opts.max_iters; ++it) {
    double beta = 0.0;
    if (opts.accelerate) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
      beta = (t_mom - 1.0) / t_next;
      t_mom = t_next;
    }

    State next;
    for (int attempt = 0; attempt < 2; ++attempt) {
      // Extrapolated point y = x + beta (x - x_prev); A y and F A y follow by linearity.
      Vec s = Vec::Zero(N);
      Vec r = p;
      std::vector<Vec> y(n), vy(n);
      for (int k = 0; k < n; ++k) {
        y[k] = cur.x[k] + beta * (cur.x[k] - prev.x[k]);
        s += y[k];
        r -= cur.u[k] + beta * (cur.u[k] - prev.u[k]);
        vy[k] = cur.v[k] + beta * (cur.v[k] - prev.v[k]);
      }
      next = State{std::vector<Vec>(n), std::vector<Vec>(n), std::vector<Vec>(n), 0.0};
      for (int k = 0; k < n; ++k) {
        Vec back = -r;
        if (eta * mu[k] != 0.0)
          back += eta * mu[k] * apply_reject(bank, k, op, vy[k]);
        const Vec grad = 2.0 * apply_at(op, back) + 2.0 * lambda * s;
        next.x[k] = y[k] - step * grad;
        if (opts.nonnegative)
          next.x[k] = next.x[k].cwiseMax(0.0);
      }
      finish_state(next);
      if (!std::isfinite(next.objective))
        throw Divergence("fbMB objective became non-finite at iteration " + std::to_string(it));
      if (next.objective <= cur.objective || beta == 0.0)
        break;
      // Momentum overshot: restart from a plain projected-gradient step.
      beta = 0.0;
      t_mom = 1.0;
    }

    res.iterations_used = it;
    if (next.objective > cur.objective) {
      // Even the plain step failed to descend: rounding-level stagnation.
      res.converged = true;
      break;
    }
    const double change = cur.objective - next.objective;
    prev = std::move(cur);
    cur = std::move(next);
    if (opts.record_trace || it == opts.max_iters)
      res.objective_trace.push_back(cur.objective);
    if (change <= opts.rel_tol * std::max(prev.objective, std::numeric_limits<double>::min())) {
      res.converged = true;
      break;
    }
  }
  if (!opts.record_trace && res.objective_trace.back() != cur.objective)
    res.objective_trace.push_back(cur.objective);

  res.components.reserve(n);
  for (int k = 0; k < n; ++k) {
    res.components.emplace_back(op.grid(), std::vector<double>(cur.x[k].data(), cur.x[k].data() + N));
    for (Eigen::Index j = 0; j < N; ++j)
      res.total.data[j] += res.components[k].data[j];
  }
  return res;
}

} // namespace oat
