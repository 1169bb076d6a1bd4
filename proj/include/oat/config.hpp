#pragma once

#include "oat/core.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <limits>

namespace oat {

/// SNR sentinel meaning "add no noise".
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Parses and validates an experiment configuration.
///
/// Required keys: grid.nx, grid.ny, grid.dx_m, sensors.n_d, sensors.radius_m,
/// physics.vs_mps, physics.dt_s, physics.nt, bands.edges_hz.
///
/// Defaults for optional keys:
///   grid.slice_thickness_m   = grid.dx_m
///   grid.origin_m            = chosen so the grid is centered on sensors.center_m
///   sensors.center_m         = [0, 0]
///   bands.order              = 4
///   bands.bw_factor          = 1.0
///   solver.lambda            = 0
///   solver.eta               = 0.01
///   solver.eta_i             = 1
///   solver.mu                = 1/n for each of the n bands
///   perturb.vs_jitter_mps    = 10
///   perturb.pos_jitter_frac  = 0.001
///   perturb.snr_db_range     = [20, 80]; null disables noise (stored as +inf)
///   seed                     = 0
///
/// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json &doc);
ExperimentConfig load_config(const std::filesystem::path &path);

nlohmann::json config_to_json(const ExperimentConfig &cfg);

/// 128x128 grid at 50 um, 32 sensors on an 8.5 mm circle, 78.8 MHz, 1024
/// samples, two bands [0.18, 1.65, 15] MHz with bw_factor 1.6.
ExperimentConfig full_config();

/// Desk-scale variant: 32x32 grid at 200 um (same 6.4 mm field), 8 sensors,
/// otherwise identical to full_config().
ExperimentConfig desk_config();

/// Three bands [0.44, 1.33, 4, 12] MHz with bw_factor 1.
BandSpec three_band_spec();

} // namespace oat
