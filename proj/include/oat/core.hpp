#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace oat {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

double norm(Vec2 v);

/// Square-pixel imaging grid. Pixel j sits at origin + (j mod nx, j div nx) * dx,
/// i.e. images are linearized row-major with x varying fastest.
class ImagingGrid {
public:
  ImagingGrid(int nx, int ny, double dx, Vec2 origin, double slice_thickness);

  /// Grid of nx*ny pixels whose geometric center is `center`.
  /// A non-positive slice thickness defaults to dx.
  static ImagingGrid centered(int nx, int ny, double dx, Vec2 center = {},
                              double slice_thickness = 0.0);

  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(nx_) * ny_; }
  double dx() const noexcept { return dx_; }
  Vec2 origin() const noexcept { return origin_; }
  double slice_thickness() const noexcept { return slice_thickness_; }
  /// Volume of one pixel voxel, dx * dx * slice_thickness.
  double voxel_volume() const noexcept { return dx_ * dx_ * slice_thickness_; }

  /// Axis-aligned bounding box of the pixel footprints: {xmin, ymin, xmax, ymax}.
  std::array<double, 4> bounds() const noexcept;
  bool contains(Vec2 p) const noexcept;

  std::uint64_t fingerprint() const noexcept;

  friend bool operator==(const ImagingGrid &, const ImagingGrid &) = default;

private:
  int nx_;
  int ny_;
  double dx_;
  Vec2 origin_;
  double slice_thickness_;
};

Vec2 pixel_center(const ImagingGrid &grid, std::size_t j);

struct SensorArray {
  std::vector<Vec2> positions;
  double nominal_radius = 0.0;
  Vec2 center;

  std::size_t size() const noexcept { return positions.size(); }
  std::uint64_t fingerprint() const noexcept;
};

/// Sensors at angles 2*pi*l/n_d, l = 0..n_d-1, on a circle.
SensorArray make_circular_array(int n_d, double radius, Vec2 center = {});

/// Throws GeometryError unless every sensor lies outside the grid's bounding box.
void check_sensors_outside(const ImagingGrid &grid, const SensorArray &sensors);

/// Detector signals, n_d channels of n_t samples; sample k of channel l is
/// data[l * n_t + k] at time t0 + k * dt.
struct Sinogram {
  int n_d = 0;
  int n_t = 0;
  double dt = 1.0;
  double t0 = 0.0;
  std::vector<double> data;

  Sinogram() = default;
  Sinogram(int n_d, int n_t, double dt, double t0 = 0.0);

  std::span<double> channel(int l) {
    return {data.data() + static_cast<std::size_t>(l) * n_t, static_cast<std::size_t>(n_t)};
  }
  std::span<const double> channel(int l) const {
    return {data.data() + static_cast<std::size_t>(l) * n_t, static_cast<std::size_t>(n_t)};
  }
  double fs() const noexcept { return 1.0 / dt; }
  bool same_shape(const Sinogram &o) const noexcept { return n_d == o.n_d && n_t == o.n_t; }
  /// Throws InvalidArgument on dt <= 0, size mismatch or non-finite samples.
  void validate() const;
};

struct Image {
  ImagingGrid grid;
  std::vector<double> data;

  explicit Image(const ImagingGrid &g);
  Image(const ImagingGrid &g, std::vector<double> values);

  double &operator[](std::size_t j) { return data[j]; }
  double operator[](std::size_t j) const { return data[j]; }
  std::size_t size() const noexcept { return data.size(); }
};

/// Band edges e_0 < e_1 < ... < e_n in Hz. Band k is [e_k, e_{k+1}], widened to
/// [e_k / bw_factor, e_{k+1} * bw_factor] when the filters are designed.
struct BandSpec {
  std::vector<double> edges;
  int order = 4;
  double bw_factor = 1.0;

  int count() const noexcept { return static_cast<int>(edges.size()) - 1; }
  double lo(int k) const { return edges.at(k) / bw_factor; }
  double hi(int k) const { return edges.at(k + 1) * bw_factor; }
  /// Throws InvalidArgument when the widened bands do not fit in (0, fs/2).
  void validate(double fs) const;
};

struct SensorSpec {
  int n_d = 32;
  double radius = 8.5e-3;
  Vec2 center;
};

struct ExperimentConfig {
  ImagingGrid grid = ImagingGrid::centered(128, 128, 50e-6);
  SensorSpec sensor_spec;
  SensorArray sensors = make_circular_array(32, 8.5e-3);
  double v_s = 1485.0;
  double dt = 1.0 / 78.8e6;
  int n_t = 1024;
  BandSpec bands{{0.18e6, 1.65e6, 15e6}, 4, 1.6};
  double lambda = 0.0;
  double eta = 0.01;
  double eta_i = 1.0;
  std::vector<double> mu{0.5, 0.5};
  std::array<double, 2> snr_db_range{20.0, 80.0};
  double vs_jitter = 10.0;
  double pos_jitter_frac = 1e-3;
  std::uint64_t seed = 0;

  double fs() const noexcept { return 1.0 / dt; }
  /// Rebuilds `sensors` from `sensor_spec`.
  void rebuild_sensors();
};

} // namespace oat
