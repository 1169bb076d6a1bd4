#include "oat/core.hpp"

#include "oat/errors.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

namespace oat {

namespace {

// FNV-1a over the object representation of trivially copyable values.
class Fnv1a {
public:
  template <class T> Fnv1a &add(const T &v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (unsigned char b : bytes) {
      h_ ^= b;
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  std::uint64_t value() const { return h_; }

private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

} // namespace

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

ImagingGrid::ImagingGrid(int nx, int ny, double dx, Vec2 origin, double slice_thickness)
    : nx_(nx), ny_(ny), dx_(dx), origin_(origin), slice_thickness_(slice_thickness) {
  if (nx < 1 || ny < 1)
    throw InvalidArgument("grid needs nx >= 1 and ny >= 1");
  if (!(dx > 0.0) || !std::isfinite(dx))
    throw InvalidArgument("grid pixel pitch must be positive");
  if (!(slice_thickness > 0.0) || !std::isfinite(slice_thickness))
    throw InvalidArgument("grid slice thickness must be positive");
  if (!std::isfinite(origin.x) || !std::isfinite(origin.y))
    throw InvalidArgument("grid origin must be finite");
}

ImagingGrid ImagingGrid::centered(int nx, int ny, double dx, Vec2 center,
                                  double slice_thickness) {
  const Vec2 origin{center.x - 0.5 * (nx - 1) * dx, center.y - 0.5 * (ny - 1) * dx};
  return ImagingGrid(nx, ny, dx, origin, slice_thickness > 0.0 ? slice_thickness : dx);
}

std::array<double, 4> ImagingGrid::bounds() const noexcept {
  const double h = 0.5 * dx_;
  return {origin_.x - h, origin_.y - h, origin_.x + (nx_ - 1) * dx_ + h,
          origin_.y + (ny_ - 1) * dx_ + h};
}

bool ImagingGrid::contains(Vec2 p) const noexcept {
  const auto b = bounds();
  return p.x >= b[0] && p.x <= b[2] && p.y >= b[1] && p.y <= b[3];
}

std::uint64_t ImagingGrid::fingerprint() const noexcept {
  return Fnv1a{}.add(nx_).add(ny_).add(dx_).add(origin_.x).add(origin_.y).add(slice_thickness_).value();
}

Vec2 pixel_center(const ImagingGrid &grid, std::size_t j) {
  if (j >= grid.size())
    throw InvalidArgument("pixel index " + std::to_string(j) + " out of range");
  const auto nx = static_cast<std::size_t>(grid.nx());
  const double ix = static_cast<double>(j % nx);
  const double iy = static_cast<double>(j / nx);
  return {grid.origin().x + ix * grid.dx(), grid.origin().y + iy * grid.dx()};
}

std::uint64_t SensorArray::fingerprint() const noexcept {
  Fnv1a h;
  h.add(positions.size());
  for (const auto &p : positions)
    h.add(p.x).add(p.y);
  return h.value();
}

SensorArray make_circular_array(int n_d, double radius, Vec2 center) {
  if (n_d < 1)
    throw InvalidArgument("sensor count must be >= 1");
  if (!(radius > 0.0))
    throw InvalidArgument("sensor radius must be positive");
  SensorArray a;
  a.nominal_radius = radius;
  a.center = center;
  a.positions.reserve(n_d);
  for (int l = 0; l < n_d; ++l) {
    const double phi = 2.0 * std::numbers::pi * l / n_d;
    a.positions.push_back({center.x + radius * std::cos(phi), center.y + radius * std::sin(phi)});
  }
  return a;
}

void check_sensors_outside(const ImagingGrid &grid, const SensorArray &sensors) {
  if (sensors.positions.empty())
    throw GeometryError("sensor array is empty");
  for (std::size_t l = 0; l < sensors.size(); ++l)
    if (grid.contains(sensors.positions[l]))
      throw GeometryError("sensor " + std::to_string(l) + " lies inside the imaging grid");
}

Sinogram::Sinogram(int n_d_, int n_t_, double dt_, double t0_)
    : n_d(n_d_), n_t(n_t_), dt(dt_), t0(t0_),
      data(static_cast<std::size_t>(n_d_) * static_cast<std::size_t>(n_t_), 0.0) {
  if (n_d_ < 1 || n_t_ < 1)
    throw InvalidArgument("sinogram needs n_d >= 1 and n_t >= 1");
  if (!(dt_ > 0.0))
    throw InvalidArgument("sinogram dt must be positive");
}

void Sinogram::validate() const {
  if (!(dt > 0.0))
    throw InvalidArgument("sinogram dt must be positive");
  if (data.size() != static_cast<std::size_t>(n_d) * static_cast<std::size_t>(n_t))
    throw InvalidArgument("sinogram data size does not match n_d x n_t");
  for (double v : data)
    if (!std::isfinite(v))
      throw InvalidArgument("sinogram contains non-finite samples");
}

Image::Image(const ImagingGrid &g) : grid(g), data(g.size(), 0.0) {}

Image::Image(const ImagingGrid &g, std::vector<double> values) : grid(g), data(std::move(values)) {
  if (data.size() != grid.size())
    throw InvalidArgument("image data size does not match grid");
}

void BandSpec::validate(double fs) const {
  if (edges.size() < 2)
    throw InvalidArgument("band spec needs at least two edges");
  if (order < 2 || order % 2 != 0)
    throw InvalidArgument("band filter order must be even and >= 2");
  if (!(bw_factor >= 1.0))
    throw InvalidArgument("band widening factor must be >= 1");
  if (!(edges.front() > 0.0))
    throw InvalidArgument("band edges must be positive");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1]))
      throw InvalidArgument("band edges must be strictly increasing");
  for (int k = 0; k < count(); ++k) {
    if (!(hi(k) < 0.5 * fs))
      throw InvalidArgument("widened band " + std::to_string(k) + " exceeds Nyquist");
    if (k > 0 && !(lo(k) > lo(k - 1) && hi(k) > hi(k - 1)))
      throw InvalidArgument("widened band edges must be strictly increasing");
  }
}

void ExperimentConfig::rebuild_sensors() {
  sensors = make_circular_array(sensor_spec.n_d, sensor_spec.radius, sensor_spec.center);
}

} // namespace oat
