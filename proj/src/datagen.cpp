#include "oat/datagen.hpp"

#include "oat/config.hpp"
#include "oat/errors.hpp"
#include "oat/forward.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"
#include "oat/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>

namespace oat {

namespace {

using Polyline = std::vector<Vec2>;

// Stroke glyphs in the unit box, y up.
const std::vector<std::vector<Polyline>> &glyph_table() {
  static const std::vector<std::vector<Polyline>> table = {
      {{{0.5, 0}, {0.5, 1}}},
      {{{0, 1}, {0, 0}, {0.7, 0}}},
      {{{0, 1}, {1, 1}}, {{0.5, 1}, {0.5, 0}}},
      {{{0, 1}, {1, 1}, {0.3, 0}}},
      {{{0, 1}, {1, 1}, {0, 0}, {1, 0}}},
      {{{0, 1}, {0.5, 0}, {1, 1}}},
      {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}},
      {{{0.7, 0}, {0.7, 1}, {0, 0.35}, {1, 0.35}}},
      {{{0, 0}, {1, 1}}, {{0, 1}, {1, 0}}},
      {{{0, 0}, {0.5, 1}, {1, 0}}, {{0.25, 0.5}, {0.75, 0.5}}},
      {{{1, 1}, {0, 1}, {0, 0}, {1, 0}}, {{0, 0.5}, {0.7, 0.5}}},
      {{{0, 0}, {0, 1}}, {{1, 0}, {1, 1}}, {{0, 0.5}, {1, 0.5}}},
  };
  return table;
}

/// Pixel-unit canvas; (x, y) = (ix, iy) is the center of pixel iy * nx + ix.
struct Canvas {
  int nx, ny;
  std::vector<double> v;

  Canvas(int nx_, int ny_) : nx(nx_), ny(ny_), v(static_cast<std::size_t>(nx_) * ny_, 0.0) {}

  template <class Dist>
  void stamp(double x0, double y0, double x1, double y1, double value, Dist &&dist_minus_radius) {
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int ix1 = std::min(nx - 1, static_cast<int>(std::ceil(x1)));
    const int iy1 = std::min(ny - 1, static_cast<int>(std::ceil(y1)));
    for (int iy = iy0; iy <= iy1; ++iy)
      for (int ix = ix0; ix <= ix1; ++ix) {
        const double cover = std::clamp(0.5 - dist_minus_radius(Vec2{double(ix), double(iy)}), 0.0, 1.0);
        double &px = v[static_cast<std::size_t>(iy) * nx + ix];
        px = std::max(px, value * cover);
      }
  }

  void disk(Vec2 c, double r, double value) {
    stamp(c.x - r - 1, c.y - r - 1, c.x + r + 1, c.y + r + 1, value,
          [&](Vec2 p) { return norm(p - c) - r; });
  }

  void capsule(Vec2 a, Vec2 b, double r, double value) {
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    stamp(std::min(a.x, b.x) - r - 1, std::min(a.y, b.y) - r - 1, std::max(a.x, b.x) + r + 1,
          std::max(a.y, b.y) + r + 1, value, [&](Vec2 p) {
            const Vec2 ap = p - a;
            const double t = len2 > 0.0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
            return norm(p - (a + t * ab)) - r;
          });
  }

  Image to_image(const ImagingGrid &g) const { return Image(g, v); }
};

void displace(const Vec2 &a, const Vec2 &b, int depth, double amplitude, SplitMix64 &rng,
              Polyline &out) {
  if (depth == 0) {
    out.push_back(b);
    return;
  }
  const Vec2 d = b - a;
  const double len = norm(d);
  const Vec2 perp = len > 0.0 ? Vec2{-d.y / len, d.x / len} : Vec2{};
  const Vec2 mid = 0.5 * (a + b) + rng.uniform(-amplitude, amplitude) * len * perp;
  displace(a, mid, depth - 1, amplitude, rng, out);
  displace(mid, b, depth - 1, amplitude, rng, out);
}

} // namespace

Image shapes_phantom(const ImagingGrid &grid, std::uint64_t seed, ShapeKind kind) {
  SplitMix64 rng(seed);
  const int nx = grid.nx(), ny = grid.ny();
  const double n = std::min(nx, ny);
  Canvas canvas(nx, ny);
  const int count = 2 + static_cast<int>(rng.below(7));
  for (int o = 0; o < count; ++o) {
    const double value = rng.uniform(0.3, 1.0);
    const Vec2 c{rng.uniform(0.15, 0.85) * (nx - 1), rng.uniform(0.15, 0.85) * (ny - 1)};
    switch (kind) {
    case ShapeKind::disks:
      canvas.disk(c, rng.uniform(1.5, std::max(2.0, 0.15 * n)), value);
      break;
    case ShapeKind::rods: {
      const double len = rng.uniform(0.2, 0.6) * n;
      const double ang = rng.uniform(0.0, std::numbers::pi);
      const Vec2 h{0.5 * len * std::cos(ang), 0.5 * len * std::sin(ang)};
      canvas.capsule(c - h, c + h, rng.uniform(0.75, 2.0), value);
      break;
    }
    case ShapeKind::glyphs: {
      const auto &glyph = glyph_table()[rng.below(glyph_table().size())];
      const double size = rng.uniform(0.2, 0.4) * n;
      const double stroke = rng.uniform(0.6, 1.2);
      for (const auto &line : glyph)
        for (std::size_t i = 1; i < line.size(); ++i) {
          auto place = [&](Vec2 u) { return c + size * (u - Vec2{0.5, 0.5}); };
          canvas.capsule(place(line[i - 1]), place(line[i]), stroke, value);
        }
      break;
    }
    }
  }
  const double peak = *std::max_element(canvas.v.begin(), canvas.v.end());
  if (peak > 0.0)
    for (double &v : canvas.v)
      v /= peak;
  return canvas.to_image(grid);
}

Image vessel_phantom(const ImagingGrid &grid, std::uint64_t seed, int branches,
                     double min_width_px, double max_width_px) {
  if (branches < 2)
    throw InvalidArgument("vessel_phantom needs at least 2 branches");
  if (!(min_width_px >= 1.0) || !(max_width_px >= min_width_px))
    throw InvalidArgument("vessel_phantom needs 1 <= min_width_px <= max_width_px");
  SplitMix64 rng(seed);
  const int nx = grid.nx(), ny = grid.ny();
  const double n = std::min(nx, ny);
  const Vec2 center{0.5 * (nx - 1), 0.5 * (ny - 1)};

  struct Branch {
    Polyline path;
    double width;
  };
  struct Pending {
    Vec2 start;
    double angle;
    double width;
    int depth;
  };
  std::vector<Branch> tree;
  std::vector<Pending> queue;
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  queue.push_back({center + 0.45 * n * Vec2{std::cos(theta), std::sin(theta)},
                   theta + std::numbers::pi + rng.uniform(-0.4, 0.4), max_width_px, 0});
  for (std::size_t q = 0; q < queue.size() && static_cast<int>(tree.size()) < branches; ++q) {
    const Pending p = queue[q];
    const double len = 0.35 * n * std::pow(0.75, p.depth) * rng.uniform(0.8, 1.2);
    const Vec2 end = p.start + len * Vec2{std::cos(p.angle), std::sin(p.angle)};
    Branch b{{p.start}, p.width};
    displace(p.start, end, 3, 0.12, rng, b.path);
    tree.push_back(std::move(b));
    for (double side : {-1.0, 1.0}) {
      const double w = std::max(min_width_px, p.width * rng.uniform(0.6, 0.85));
      queue.push_back({end, p.angle + side * rng.uniform(0.35, 0.8), w, p.depth + 1});
    }
  }
  tree.back().width = min_width_px;

  Canvas canvas(nx, ny);
  for (const auto &b : tree)
    for (std::size_t i = 1; i < b.path.size(); ++i)
      canvas.capsule(b.path[i - 1], b.path[i], 0.5 * b.width, 1.0);
  return canvas.to_image(grid);
}

Sinogram add_noise(const Sinogram &s, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0)
    return s;
  if (std::isnan(snr_db) || std::isinf(snr_db))
    throw InvalidArgument("snr_db must be finite or +infinity");
  double ms = 0.0;
  for (double v : s.data)
    ms += v * v;
  if (ms == 0.0)
    throw InvalidArgument("SNR is undefined for an all-zero sinogram");
  ms /= static_cast<double>(s.data.size());
  const double sigma = std::sqrt(ms / std::pow(10.0, snr_db / 10.0));
  SplitMix64 rng(seed);
  Sinogram out = s;
  for (double &v : out.data)
    v += sigma * rng.normal();
  return out;
}

PhantomMix parse_phantom_mix(const std::string &name) {
  if (name == "shapes")
    return PhantomMix::shapes;
  if (name == "vessels")
    return PhantomMix::vessels;
  if (name == "mixed")
    return PhantomMix::mixed;
  throw InvalidArgument("unknown phantom mix '" + name + "' (expected shapes|vessels|mixed)");
}

std::string to_string(PhantomMix mix) {
  switch (mix) {
  case PhantomMix::shapes:
    return "shapes";
  case PhantomMix::vessels:
    return "vessels";
  case PhantomMix::mixed:
    return "mixed";
  }
  return "mixed";
}

RecordSeeds record_seeds(std::uint64_t master, std::uint64_t index) {
  return {hash64(master, index, SeedStream::phantom), hash64(master, index, SeedStream::perturbation),
          hash64(master, index, SeedStream::noise), hash64(master, index, SeedStream::snr)};
}

DatasetRecord simulate_record(const ExperimentConfig &cfg, std::uint64_t index, PhantomMix mix,
                              std::uint64_t master_seed) {
  const RecordSeeds seeds = record_seeds(master_seed, index);
  SplitMix64 pick(seeds.phantom);
  const bool vessel = mix == PhantomMix::vessels || (mix == PhantomMix::mixed && pick.uniform() < 0.5);
  const auto kind = static_cast<ShapeKind>(pick.below(3));
  const std::uint64_t phantom_seed = pick.next();

  RecordMeta meta;
  meta.id = index;
  meta.seeds = seeds;
  Image p0(cfg.grid);
  if (vessel) {
    const double max_w = std::max(2.0, std::round(std::min(cfg.grid.nx(), cfg.grid.ny()) / 10.0));
    p0 = vessel_phantom(cfg.grid, phantom_seed, 7, 1.0, max_w);
    meta.phantom = "vessel";
  } else {
    p0 = shapes_phantom(cfg.grid, phantom_seed, kind);
    meta.phantom = kind == ShapeKind::disks ? "disks" : kind == ShapeKind::rods ? "rods" : "glyphs";
  }

  const PerturbedSystem sys = perturbed_system(cfg, seeds.perturbation);
  meta.vs_used = sys.v_s_used;
  meta.sensor_jitter_applied = cfg.pos_jitter_frac > 0.0;
  Sinogram clean = forward_apply(sys.op, p0);

  const auto [lo, hi] = cfg.snr_db_range;
  if (std::isinf(lo)) {
    meta.snr_db = kNoNoise;
  } else {
    SplitMix64 snr_rng(seeds.snr);
    meta.snr_db = snr_rng.uniform(lo, hi);
  }
  Sinogram pd = add_noise(clean, meta.snr_db, seeds.noise);
  return {meta, std::move(p0), std::move(pd)};
}

namespace {

std::string record_name(const char *prefix, std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06llu.oat", prefix, static_cast<unsigned long long>(id));
  return buf;
}

nlohmann::json meta_to_json(const RecordMeta &m) {
  return {{"id", m.id},
          {"phantom", m.phantom},
          {"seeds",
           {{"phantom", m.seeds.phantom},
            {"perturbation", m.seeds.perturbation},
            {"noise", m.seeds.noise},
            {"snr", m.seeds.snr}}},
          {"snr_db", std::isfinite(m.snr_db) ? nlohmann::json(m.snr_db) : nlohmann::json(nullptr)},
          {"vs_used", m.vs_used},
          {"sensor_jitter_applied", m.sensor_jitter_applied},
          {"p0", record_name("p0", m.id)},
          {"pd", record_name("pd", m.id)}};
}

RecordMeta meta_from_json(const nlohmann::json &j) {
  RecordMeta m;
  m.id = j.at("id").get<std::uint64_t>();
  m.phantom = j.at("phantom").get<std::string>();
  const auto &s = j.at("seeds");
  m.seeds = {s.at("phantom").get<std::uint64_t>(), s.at("perturbation").get<std::uint64_t>(),
             s.at("noise").get<std::uint64_t>(), s.at("snr").get<std::uint64_t>()};
  m.snr_db = j.at("snr_db").is_null() ? kNoNoise : j.at("snr_db").get<double>();
  m.vs_used = j.at("vs_used").get<double>();
  m.sensor_jitter_applied = j.at("sensor_jitter_applied").get<bool>();
  return m;
}

} // namespace

std::vector<RecordMeta> generate_dataset(const ExperimentConfig &cfg, int count, PhantomMix mix,
                                         std::uint64_t master_seed, const std::filesystem::path &dir) {
  if (count < 1)
    throw InvalidArgument("dataset count must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::vector<RecordMeta> metas(count);
  std::vector<std::exception_ptr> errors(count);
  parallel_for(count, [&](std::ptrdiff_t i) {
    try {
      const DatasetRecord rec = simulate_record(cfg, static_cast<std::uint64_t>(i), mix, master_seed);
      write_image(dir / record_name("p0", rec.meta.id), rec.p0);
      write_sinogram(dir / record_name("pd", rec.meta.id), rec.pd);
      metas[i] = rec.meta;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);

  nlohmann::json records = nlohmann::json::array();
  for (const auto &m : metas)
    records.push_back(meta_to_json(m));
  const nlohmann::json manifest = {{"format_version", kDatasetFormatVersion},
                                   {"config", config_to_json(cfg)},
                                   {"count", count},
                                   {"master_seed", master_seed},
                                   {"phantom_mix", to_string(mix)},
                                   {"records", records}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return metas;
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path &dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != kDatasetFormatVersion)
      throw FormatError("unsupported dataset format version in " + path.string());
    return j;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
}

} // namespace

ExperimentConfig dataset_config(const std::filesystem::path &dir) {
  return parse_config(read_manifest(dir).at("config"));
}

Dataset load_dataset(const std::filesystem::path &dir, const ExperimentConfig &cfg) {
  Dataset ds;
  ds.manifest = read_manifest(dir);
  const auto &recs = ds.manifest.at("records");
  ds.records.reserve(recs.size());
  for (const auto &j : recs) {
    RecordMeta meta;
    try {
      meta = meta_from_json(j);
    } catch (const nlohmann::json::exception &e) {
      throw FormatError(std::string("malformed dataset record: ") + e.what());
    }
    Image p0 = read_image(dir / j.at("p0").get<std::string>(), cfg.grid);
    Sinogram pd = read_sinogram(dir / j.at("pd").get<std::string>(), cfg.dt);
    if (pd.n_d != static_cast<int>(cfg.sensors.size()) || pd.n_t != cfg.n_t)
      throw FormatError("sinogram shape of record " + std::to_string(meta.id) +
                        " does not match the configuration");
    ds.records.push_back({meta, std::move(p0), std::move(pd)});
  }
  return ds;
}

} // namespace oat
