#pragma once

#include "oat/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace oat {

/// On-disk tensor: "OATTENSR", u32 rank, rank x u32 dims, row-major float32
/// payload. All integers and floats little-endian.
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<double> data;

  std::size_t numel() const noexcept { return data.size(); }
};

inline constexpr char kTensorMagic[8] = {'O', 'A', 'T', 'T', 'E', 'N', 'S', 'R'};

/// Values are narrowed to binary32 on write.
void write_tensor(const std::filesystem::path &path, std::span<const std::uint32_t> shape,
                  std::span<const double> data);
Tensor read_tensor(const std::filesystem::path &path);

void write_image(const std::filesystem::path &path, const Image &img);
/// Reads a rank-2 tensor of shape (ny, nx) and attaches it to `grid`.
Image read_image(const std::filesystem::path &path, const ImagingGrid &grid);

void write_sinogram(const std::filesystem::path &path, const Sinogram &s);
Sinogram read_sinogram(const std::filesystem::path &path, double dt, double t0 = 0.0);

/// Binary PGM (P5) with 16-bit big-endian samples, min-max scaled to 0..65535.
/// Writes `<path>.json` recording {min, max, maxval}.
void write_pgm_preview(const std::filesystem::path &path, const Image &img);

/// Writes `text` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path &path, const std::string &text);

} // namespace oat
