#pragma once

#include "oat/core.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace oat {

struct ExperimentConfig;

enum class ShapeKind { disks, rods, glyphs };

/// 2-8 anti-aliased objects of the given kind with relative intensities in
/// [0.3, 1], composited by maximum and scaled so the peak is 1. Pure function
/// of the seed.
Image shapes_phantom(const ImagingGrid &grid, std::uint64_t seed, ShapeKind kind);

/// Branching vessel tree: `branches` segments grown breadth-first from a root
/// near the border, each made tortuous by recursive midpoint displacement.
/// Widths (diameters, pixels) taper from max_width_px; the last branch is
/// forced to min_width_px. Values lie in [0, 1].
Image vessel_phantom(const ImagingGrid &grid, std::uint64_t seed, int branches = 7,
                     double min_width_px = 1.0, double max_width_px = 3.0);

/// Adds white Gaussian noise with variance mean(s^2) / 10^(snr_db / 10).
/// snr_db = +infinity returns the input unchanged. Throws InvalidArgument on
/// an all-zero sinogram.
Sinogram add_noise(const Sinogram &s, double snr_db, std::uint64_t seed);

enum class PhantomMix { shapes, vessels, mixed };

PhantomMix parse_phantom_mix(const std::string &name);
std::string to_string(PhantomMix mix);

/// Seeds of one record, each hash64(master, index, stream).
struct RecordSeeds {
  std::uint64_t phantom = 0;
  std::uint64_t perturbation = 0;
  std::uint64_t noise = 0;
  std::uint64_t snr = 0;
};

RecordSeeds record_seeds(std::uint64_t master, std::uint64_t index);

struct RecordMeta {
  std::uint64_t id = 0;
  RecordSeeds seeds;
  std::string phantom;
  double snr_db = 0.0; // +infinity when noise is disabled
  double vs_used = 0.0;
  bool sensor_jitter_applied = false;
};

struct DatasetRecord {
  RecordMeta meta;
  Image p0;
  Sinogram pd;
};

/// One record: draw the phantom, a perturbed operator and an SNR in
/// cfg.snr_db_range, then pd = A_perturbed p0 plus noise.
DatasetRecord simulate_record(const ExperimentConfig &cfg, std::uint64_t index, PhantomMix mix,
                              std::uint64_t master_seed);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes p0_%06d.oat / pd_%06d.oat for each record and manifest.json (config,
/// count, master seed, mix, format version, per-record metadata) to `dir`.
/// Records are generated in parallel; content does not depend on thread count.
std::vector<RecordMeta> generate_dataset(const ExperimentConfig &cfg, int count, PhantomMix mix,
                                         std::uint64_t master_seed, const std::filesystem::path &dir);

/// Dataset held in memory, values as stored (float32 precision).
struct Dataset {
  nlohmann::json manifest;
  std::vector<DatasetRecord> records;
};

Dataset load_dataset(const std::filesystem::path &dir, const ExperimentConfig &cfg);
/// Reads the configuration embedded in a dataset manifest.
ExperimentConfig dataset_config(const std::filesystem::path &dir);

} // namespace oat
