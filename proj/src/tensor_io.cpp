#include "oat/tensor_io.hpp"

#include "oat/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace oat {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::string &buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string slurp(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad())
    throw IoError("read failed for " + path.string());
  return buf;
}

void dump(const std::filesystem::path &path, const std::string &buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out)
    throw IoError("write failed for " + path.string());
}

} // namespace

void write_tensor(const std::filesystem::path &path, std::span<const std::uint32_t> shape,
                  std::span<const double> data) {
  std::uint64_t count = 1;
  for (auto d : shape)
    count *= d;
  if (count != data.size())
    throw InvalidArgument("tensor data length does not match shape");

  std::string buf;
  buf.reserve(8 + 4 + 4 * shape.size() + 4 * data.size());
  buf.append(kTensorMagic, 8);
  put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape)
    put_u32(buf, d);
  for (double v : data)
    put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  dump(path, buf);
}

Tensor read_tensor(const std::filesystem::path &path) {
  const std::string buf = slurp(path);
  const auto *p = reinterpret_cast<const unsigned char *>(buf.data());
  if (buf.size() < 12 || std::memcmp(buf.data(), kTensorMagic, 8) != 0)
    throw FormatError(path.string() + ": bad tensor magic");
  const std::uint32_t rank = get_u32(p + 8);
  // A rank this large cannot describe a real file; also guards the header size below.
  if (rank > 64)
    throw FormatError(path.string() + ": implausible tensor rank");
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(rank);
  if (buf.size() < header)
    throw FormatError(path.string() + ": truncated tensor header");

  Tensor t;
  t.shape.resize(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape[i] = get_u32(p + 12 + 4 * i);
    if (t.shape[i] != 0 && count > std::numeric_limits<std::uint64_t>::max() / 4 / t.shape[i])
      throw FormatError(path.string() + ": tensor dims overflow");
    count *= t.shape[i];
  }
  if (buf.size() - header != 4 * count)
    throw FormatError(path.string() + ": payload size does not match dims");

  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    t.data[i] = std::bit_cast<float>(get_u32(p + header + 4 * i));
  return t;
}

void write_image(const std::filesystem::path &path, const Image &img) {
  const std::uint32_t shape[2] = {static_cast<std::uint32_t>(img.grid.ny()),
                                  static_cast<std::uint32_t>(img.grid.nx())};
  write_tensor(path, shape, img.data);
}

Image read_image(const std::filesystem::path &path, const ImagingGrid &grid) {
  Tensor t = read_tensor(path);
  if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint32_t>(grid.ny()) ||
      t.shape[1] != static_cast<std::uint32_t>(grid.nx()))
    throw FormatError(path.string() + ": image shape does not match grid");
  return Image(grid, std::move(t.data));
}

void write_sinogram(const std::filesystem::path &path, const Sinogram &s) {
  const std::uint32_t shape[2] = {static_cast<std::uint32_t>(s.n_d),
                                  static_cast<std::uint32_t>(s.n_t)};
  write_tensor(path, shape, s.data);
}

Sinogram read_sinogram(const std::filesystem::path &path, double dt, double t0) {
  Tensor t = read_tensor(path);
  if (t.shape.size() != 2 || t.shape[0] == 0 || t.shape[1] == 0)
    throw FormatError(path.string() + ": sinogram must be a non-empty rank-2 tensor");
  Sinogram s(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), dt, t0);
  s.data = std::move(t.data);
  s.validate();
  return s;
}

void write_pgm_preview(const std::filesystem::path &path, const Image &img) {
  const auto [lo_it, hi_it] = std::minmax_element(img.data.begin(), img.data.end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  constexpr int maxval = 65535;

  std::string buf = "P5\n" + std::to_string(img.grid.nx()) + " " + std::to_string(img.grid.ny()) +
                    "\n" + std::to_string(maxval) + "\n";
  // PGM rows run top to bottom; grid row iy = 0 is the lowest y, so flip.
  for (int iy = img.grid.ny() - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < img.grid.nx(); ++ix) {
      const double v = img.data[static_cast<std::size_t>(iy) * img.grid.nx() + ix];
      const double u = range > 0.0 ? (v - lo) / range : 0.0;
      const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(u, 0.0, 1.0) * maxval));
      buf.push_back(static_cast<char>(q >> 8));
      buf.push_back(static_cast<char>(q & 0xff));
    }
  }
  dump(path, buf);

  nlohmann::json side = {{"min", lo}, {"max", hi}, {"maxval", maxval}, {"flipped_y", true}};
  auto sidecar = path;
  sidecar += ".json";
  write_file_atomic(sidecar, side.dump(2) + "\n");
}

void write_file_atomic(const std::filesystem::path &path, const std::string &text) {
  auto tmp = path;
  tmp += ".tmp";
  dump(tmp, text);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

} // namespace oat
