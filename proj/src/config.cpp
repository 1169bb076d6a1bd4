#include "oat/config.hpp"

#include "oat/errors.hpp"

#include <cmath>
#include <fstream>

namespace oat {

using nlohmann::json;

namespace {

const json &section(const json &doc, const char *name) {
  static const json empty = json::object();
  if (!doc.contains(name))
    return empty;
  const json &s = doc.at(name);
  if (!s.is_object())
    throw ConfigError(name, "must be an object");
  return s;
}

template <class T> T required(const json &sec, const std::string &prefix, const char *key) {
  const std::string full = prefix + "." + key;
  if (!sec.contains(key))
    throw ConfigError(full, "missing required key");
  try {
    return sec.at(key).get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(full, e.what());
  }
}

template <class T>
T optional(const json &sec, const std::string &prefix, const char *key, T fallback) {
  if (!sec.contains(key) || sec.at(key).is_null())
    return fallback;
  try {
    return sec.at(key).get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(prefix + "." + key, e.what());
  }
}

Vec2 to_vec2(const std::vector<double> &v, const std::string &key) {
  if (v.size() != 2)
    throw ConfigError(key, "expected a 2-element array");
  return {v[0], v[1]};
}

void require(bool ok, const std::string &key, const std::string &what) {
  if (!ok)
    throw ConfigError(key, what);
}

} // namespace

ExperimentConfig parse_config(const json &doc) {
  if (!doc.is_object())
    throw ConfigError("<root>", "config must be a JSON object");
  ExperimentConfig cfg;

  const json &sensors = section(doc, "sensors");
  cfg.sensor_spec.n_d = required<int>(sensors, "sensors", "n_d");
  cfg.sensor_spec.radius = required<double>(sensors, "sensors", "radius_m");
  cfg.sensor_spec.center = to_vec2(
      optional<std::vector<double>>(sensors, "sensors", "center_m", {0.0, 0.0}), "sensors.center_m");
  require(cfg.sensor_spec.n_d >= 1, "sensors.n_d", "must be >= 1");
  require(cfg.sensor_spec.radius > 0.0, "sensors.radius_m", "must be positive");

  const json &grid = section(doc, "grid");
  const int nx = required<int>(grid, "grid", "nx");
  const int ny = required<int>(grid, "grid", "ny");
  const double dx = required<double>(grid, "grid", "dx_m");
  require(nx >= 1, "grid.nx", "must be >= 1");
  require(ny >= 1, "grid.ny", "must be >= 1");
  require(dx > 0.0, "grid.dx_m", "must be positive");
  const double slice = optional<double>(grid, "grid", "slice_thickness_m", dx);
  require(slice > 0.0, "grid.slice_thickness_m", "must be positive");
  if (grid.contains("origin_m") && !grid.at("origin_m").is_null()) {
    const Vec2 origin = to_vec2(grid.at("origin_m").get<std::vector<double>>(), "grid.origin_m");
    cfg.grid = ImagingGrid(nx, ny, dx, origin, slice);
  } else {
    cfg.grid = ImagingGrid::centered(nx, ny, dx, cfg.sensor_spec.center, slice);
  }

  cfg.rebuild_sensors();
  try {
    check_sensors_outside(cfg.grid, cfg.sensors);
  } catch (const GeometryError &e) {
    throw ConfigError("sensors.radius_m", e.what());
  }

  const json &phys = section(doc, "physics");
  cfg.v_s = required<double>(phys, "physics", "vs_mps");
  cfg.dt = required<double>(phys, "physics", "dt_s");
  cfg.n_t = required<int>(phys, "physics", "nt");
  require(cfg.v_s > 0.0, "physics.vs_mps", "must be positive");
  require(cfg.dt > 0.0, "physics.dt_s", "must be positive");
  require(cfg.n_t >= 2, "physics.nt", "must be >= 2");

  const json &bands = section(doc, "bands");
  cfg.bands.edges = required<std::vector<double>>(bands, "bands", "edges_hz");
  cfg.bands.order = optional<int>(bands, "bands", "order", 4);
  cfg.bands.bw_factor = optional<double>(bands, "bands", "bw_factor", 1.0);
  require(cfg.bands.edges.size() >= 2, "bands.edges_hz", "needs at least two edges");
  for (std::size_t i = 1; i < cfg.bands.edges.size(); ++i)
    require(cfg.bands.edges[i] > cfg.bands.edges[i - 1], "bands.edges_hz",
            "edges must be strictly increasing");
  require(cfg.bands.edges.front() > 0.0, "bands.edges_hz", "edges must be positive");
  require(cfg.bands.order >= 2 && cfg.bands.order % 2 == 0, "bands.order", "must be even and >= 2");
  require(cfg.bands.bw_factor >= 1.0, "bands.bw_factor", "must be >= 1");
  try {
    cfg.bands.validate(cfg.fs());
  } catch (const InvalidArgument &e) {
    throw ConfigError("bands.edges_hz", e.what());
  }
  const int n = cfg.bands.count();

  const json &solver = section(doc, "solver");
  cfg.lambda = optional<double>(solver, "solver", "lambda", 0.0);
  cfg.eta = optional<double>(solver, "solver", "eta", 0.01);
  cfg.eta_i = optional<double>(solver, "solver", "eta_i", 1.0);
  cfg.mu = optional<std::vector<double>>(solver, "solver", "mu",
                                         std::vector<double>(n, 1.0 / n));
  require(cfg.lambda >= 0.0, "solver.lambda", "must be >= 0");
  require(cfg.eta >= 0.0, "solver.eta", "must be >= 0");
  require(cfg.eta_i >= 0.0, "solver.eta_i", "must be >= 0");
  require(static_cast<int>(cfg.mu.size()) == n, "solver.mu",
          "length must equal the number of bands (" + std::to_string(n) + ")");
  for (double m : cfg.mu)
    require(m >= 0.0, "solver.mu", "weights must be >= 0");

  const json &pert = section(doc, "perturb");
  cfg.vs_jitter = optional<double>(pert, "perturb", "vs_jitter_mps", 10.0);
  cfg.pos_jitter_frac = optional<double>(pert, "perturb", "pos_jitter_frac", 1e-3);
  if (pert.contains("snr_db_range") && pert["snr_db_range"].is_null()) {
    cfg.snr_db_range = {kNoNoise, kNoNoise};
  } else {
    const auto snr = optional<std::vector<double>>(pert, "perturb", "snr_db_range", {20.0, 80.0});
    require(snr.size() == 2 && snr[0] <= snr[1], "perturb.snr_db_range",
            "expected [lo, hi] with lo <= hi, or null for no noise");
    cfg.snr_db_range = {snr[0], snr[1]};
  }
  require(cfg.vs_jitter >= 0.0 && cfg.vs_jitter < cfg.v_s, "perturb.vs_jitter_mps",
          "must be in [0, vs_mps)");
  require(cfg.pos_jitter_frac >= 0.0 && cfg.pos_jitter_frac < 1.0, "perturb.pos_jitter_frac",
          "must be in [0, 1)");

  cfg.seed = optional<std::uint64_t>(doc, "<root>", "seed", 0);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("<root>", e.what());
  }
  return parse_config(doc);
}

json config_to_json(const ExperimentConfig &cfg) {
  const auto &g = cfg.grid;
  return {
      {"grid",
       {{"nx", g.nx()},
        {"ny", g.ny()},
        {"dx_m", g.dx()},
        {"slice_thickness_m", g.slice_thickness()},
        {"origin_m", {g.origin().x, g.origin().y}}}},
      {"sensors",
       {{"n_d", cfg.sensor_spec.n_d},
        {"radius_m", cfg.sensor_spec.radius},
        {"center_m", {cfg.sensor_spec.center.x, cfg.sensor_spec.center.y}}}},
      {"physics", {{"vs_mps", cfg.v_s}, {"dt_s", cfg.dt}, {"nt", cfg.n_t}}},
      {"bands",
       {{"edges_hz", cfg.bands.edges}, {"order", cfg.bands.order}, {"bw_factor", cfg.bands.bw_factor}}},
      {"solver", {{"lambda", cfg.lambda}, {"eta", cfg.eta}, {"eta_i", cfg.eta_i}, {"mu", cfg.mu}}},
      {"perturb",
       {{"vs_jitter_mps", cfg.vs_jitter},
        {"pos_jitter_frac", cfg.pos_jitter_frac},
        {"snr_db_range", std::isinf(cfg.snr_db_range[0])
                             ? json(nullptr)
                             : json{cfg.snr_db_range[0], cfg.snr_db_range[1]}}}},
      {"seed", cfg.seed},
  };
}

ExperimentConfig full_config() {
  ExperimentConfig cfg;
  cfg.grid = ImagingGrid::centered(128, 128, 50e-6);
  cfg.sensor_spec = {32, 8.5e-3, {}};
  cfg.rebuild_sensors();
  return cfg;
}

ExperimentConfig desk_config() {
  ExperimentConfig cfg = full_config();
  cfg.grid = ImagingGrid::centered(32, 32, 200e-6);
  cfg.sensor_spec.n_d = 8;
  cfg.rebuild_sensors();
  return cfg;
}

BandSpec three_band_spec() { return BandSpec{{0.44e6, 1.33e6, 4e6, 12e6}, 4, 1.0}; }

} // namespace oat
