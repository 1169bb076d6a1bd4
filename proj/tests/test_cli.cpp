#include "oat/config.hpp"
#include "oat/datagen.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"
#include "oat/learned.hpp"
#include "oat/rng.hpp"
#include "oat/tensor_io.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace oat;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() /
          ("oat_cli_" + std::to_string(SplitMix64(reinterpret_cast<std::uintptr_t>(this)).next()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path operator/(const std::string &p) const { return dir / p; }
};

struct Result {
  int code = -1;
  std::string err;
};

Result run(const std::string &args, const Scratch &s) {
  const fs::path err = s / "stderr.txt";
  const std::string cmd =
      std::string(OAT_CLI_PATH) + " --threads 1 " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path &p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

nlohmann::json read_json(const fs::path &p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

} // namespace

TEST_CASE("simulate") {
  Scratch s;
  REQUIRE(run("simulate --count 4 --phantom vessels --seed 7 --out " + (s / "a").string(), s).code == 0);
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pd_%06d.oat", i);
    CHECK(fs::exists(s / "a" / name));
    std::snprintf(name, sizeof name, "p0_%06d.oat", i);
    CHECK(fs::exists(s / "a" / name));
  }
  CHECK(read_json(s / "a" / "manifest.json").at("count") == 4);
  const auto rm = read_json(s / "a" / "run_manifest.json");
  CHECK(rm.at("command") == "simulate");
  CHECK(rm.at("seeds").at("master") == 7);
  CHECK(rm.at("timings_s").at("simulate").get<double>() >= 0.0);

  REQUIRE(run("simulate --count 4 --phantom vessels --seed 7 --out " + (s / "b").string(), s).code == 0);
  for (const auto &e : fs::directory_iterator(s / "a"))
    if (e.path().extension() == ".oat" || e.path().filename() == "manifest.json")
      CHECK(slurp(e.path()) == slurp(s / "b" / e.path().filename()));

  nlohmann::json bad = config_to_json(desk_config());
  bad["bands"]["edges_hz"] = {1.65e6, 0.18e6};
  std::ofstream(s / "bad.json") << bad.dump();
  const Result r = run("simulate --count 1 --config " + (s / "bad.json").string() + " --out " +
                           (s / "c").string(),
                       s);
  CHECK(r.code == 2);
  CHECK(r.err.find("bands.edges_hz") != std::string::npos);

  CHECK(run("simulate --count 1 --phantom blobs --out " + (s / "d").string(), s).code == 2);
  CHECK(run("simulate --count 1 --config " + (s / "missing.json").string() + " --out " +
                (s / "d").string(),
            s)
            .code == 3);
}

TEST_CASE("reconstruct") {
  Scratch s;
  const ExperimentConfig cfg = desk_config();
  const SparseOperator op = nominal_operator(cfg);
  const Image p0 = vessel_phantom(cfg.grid, 5);
  const Sinogram pd = forward_apply(op, p0);
  write_sinogram(s / "pd.oat", pd);
  // The file holds float32 samples; the reference uses what the CLI reads.
  const Sinogram stored = read_sinogram(s / "pd.oat", cfg.dt);

  REQUIRE(run("reconstruct --method lbp --sinogram " + (s / "pd.oat").string() + " --out " +
                  (s / "lbp").string(),
              s)
              .code == 0);
  const Image lbp_img = read_image(s / "lbp" / "image.oat", cfg.grid);
  const Image ref = adjoint_apply(op, stored);
  for (std::size_t j = 0; j < ref.size(); ++j)
    REQUIRE(lbp_img[j] == static_cast<double>(static_cast<float>(ref[j])));
  CHECK(fs::exists(s / "lbp" / "image.pgm"));

  REQUIRE(run("reconstruct --method fbmb --eta 0.01 --mu 0.5,0.5 --iters 200 --sinogram " +
                  (s / "pd.oat").string() + " --out " + (s / "fb").string(),
              s)
              .code == 0);
  for (int k = 1; k <= 2; ++k) {
    const Image c = read_image(s / "fb" / ("component_" + std::to_string(k) + ".oat"), cfg.grid);
    CHECK(*std::min_element(c.data.begin(), c.data.end()) >= 0.0);
  }
  const auto trace = read_csv(s / "fb" / "objective.csv");
  REQUIRE(trace.size() > 2);
  CHECK(trace[0][1] == "objective");
  for (std::size_t i = 2; i < trace.size(); ++i)
    CHECK(std::stod(trace[i][1]) <= std::stod(trace[i - 1][1]) * (1.0 + 1e-9));

  CHECK(run("reconstruct --method learned --sinogram " + (s / "pd.oat").string() + " --out " +
                (s / "l").string(),
            s)
            .code == 2);
  CHECK(run("reconstruct --method sirt --sinogram " + (s / "pd.oat").string() + " --out " +
                (s / "l").string(),
            s)
            .code == 2);
  CHECK(run("reconstruct --method fbmb --mu 1 --sinogram " + (s / "pd.oat").string() + " --out " +
                (s / "l").string(),
            s)
            .code == 2);
  CHECK(run("reconstruct --method das --sinogram " + (s / "nope.oat").string() + " --out " +
                (s / "l").string(),
            s)
            .code == 3);

  // One sensor: the normal matrix is singular.
  nlohmann::json one = config_to_json(desk_config());
  one["sensors"]["n_d"] = 1;
  std::ofstream(s / "one.json") << one.dump();
  ExperimentConfig one_cfg = load_config(s / "one.json");
  write_sinogram(s / "pd1.oat", forward_apply(nominal_operator(one_cfg), p0));
  CHECK(run("reconstruct --method tikhonov --lambda 0 --config " + (s / "one.json").string() +
                " --sinogram " + (s / "pd1.oat").string() + " --out " + (s / "t").string(),
            s)
            .code == 4);
}

TEST_CASE("train, learned reconstruction and evaluate") {
  Scratch s;
  REQUIRE(run("simulate --count 16 --phantom mixed --seed 3 --out " + (s / "ds").string(), s).code == 0);
  REQUIRE(run("train --dataset " + (s / "ds").string() + " --epochs 10 --seed 1 --out " +
                  (s / "m1").string(),
              s)
              .code == 0);
  const auto loss = read_csv(s / "m1" / "loss.csv");
  REQUIRE(loss.size() == 11);
  CHECK(loss[0] == std::vector<std::string>{"epoch", "train_loss", "val_loss"});
  CHECK(std::stod(loss[10][1]) < std::stod(loss[1][1]));
  CHECK(read_json(s / "m1" / "model.json").at("clamp_outputs") == false);

  REQUIRE(run("train --dataset " + (s / "ds").string() + " --epochs 10 --seed 1 --out " +
                  (s / "m2").string(),
              s)
              .code == 0);
  CHECK(slurp(s / "m1" / "W_1.oat") == slurp(s / "m2" / "W_1.oat"));
  CHECK(slurp(s / "m1" / "W_2.oat") == slurp(s / "m2" / "W_2.oat"));

  REQUIRE(run("train --clamp --dataset " + (s / "ds").string() + " --epochs 2 --out " +
                  (s / "mc").string(),
              s)
              .code == 0);
  CHECK(read_json(s / "mc" / "model.json").at("clamp_outputs") == true);

  CHECK(run("train --dataset " + (s / "ds").string() + " --epochs 2 --lr 1e300 --out " +
                (s / "md").string(),
            s)
            .code == 4);

  REQUIRE(run("reconstruct --method learned --model " + (s / "m1").string() + " --sinogram " +
                  (s / "ds").string() + " --out " + (s / "rl").string(),
              s)
              .code == 0);
  CHECK(fs::exists(s / "rl" / "image_000015.oat"));
  CHECK(fs::exists(s / "rl" / "component_2_000015.oat"));
  const LinearBandModel model = load_model(s / "m1");
  const ExperimentConfig cfg = dataset_config(s / "ds");
  const Sinogram pd = read_sinogram(s / "ds" / "pd_000004.oat", cfg.dt);
  const auto parts = model_forward(model, pd, nominal_operator(cfg));
  const Image total = read_image(s / "rl" / "image_000004.oat", cfg.grid);
  for (std::size_t j = 0; j < total.size(); ++j)
    REQUIRE(total[j] == doctest::Approx(parts[0][j] + parts[1][j]).epsilon(1e-6));

  SUBCASE("evaluate copies of the truth") {
    fs::create_directories(s / "copy");
    for (const auto &e : fs::directory_iterator(s / "ds"))
      if (e.path().filename().string().rfind("p0_", 0) == 0)
        fs::copy_file(e.path(), s / "copy" / ("image" + e.path().filename().string().substr(2)));
    REQUIRE(run("evaluate --pred-dir " + (s / "copy").string() + " --truth-dir " +
                    (s / "ds").string() + " --label truth --out " + (s / "ev").string(),
                s)
                .code == 0);
    const auto rep = read_json(s / "ev" / "report.json");
    CHECK(rep.at("label") == "truth");
    CHECK(rep.at("n") == 16);
    // Stored truths already span [0, 1], so normalization leaves them unchanged
    // up to float32 rounding of the extremes.
    CHECK(rep.at("metrics").at("ssim").at("mean").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.at("metrics").at("pc").at("mean").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.at("metrics").at("rmse").at("mean").get<double>() <= 1e-7);
  }

  SUBCASE("evaluate the learned reconstructions") {
    REQUIRE(run("evaluate --pred-dir " + (s / "rl").string() + " --truth-dir " +
                    (s / "ds").string() + " --label learned --out " + (s / "ev").string(),
                s)
                .code == 0);
    const auto rep = read_json(s / "ev" / "report.json");
    CHECK(rep.at("per_image").size() == 16);
  }

  SUBCASE("mismatched counts") {
    fs::create_directories(s / "few");
    fs::copy_file(s / "rl" / "image_000000.oat", s / "few" / "image_000000.oat");
    CHECK(run("evaluate --pred-dir " + (s / "few").string() + " --truth-dir " +
                  (s / "ds").string() + " --label x --out " + (s / "ev").string(),
              s)
              .code == 3);
  }
}

TEST_CASE("bench") {
  Scratch s;
  const std::string cfg = (s / "cfg.json").string();
  std::ofstream(cfg) << config_to_json(desk_config()).dump();
  REQUIRE(run("bench --methods das,lbp --repeat 5 --config " + cfg + " --out " + (s / "b").string(), s)
              .code == 0);
  const auto rows = read_csv(s / "b" / "bench.csv");
  REQUIRE(rows.size() == 1 + 2 * 7);
  int das_runs = 0;
  for (const auto &r : rows)
    if (r[0] == "das" && r[1] != "median" && r[1] != "min")
      ++das_runs;
  CHECK(das_runs == 5);
  CHECK(rows[6][1] == "median");
  CHECK(rows[7][1] == "min");
  CHECK(run("bench --methods das,foo --out " + (s / "b").string(), s).code == 2);
}

TEST_CASE("spectrum") {
  Scratch s;
  const ExperimentConfig cfg = desk_config();

  write_sinogram(s / "zero.oat", Sinogram(4, cfg.n_t, cfg.dt));
  REQUIRE(run("spectrum --sinogram " + (s / "zero.oat").string() + " --out " + (s / "z").string(), s)
              .code == 0);
  const auto z = read_csv(s / "z" / "spectrum.csv");
  CHECK(z[0] == std::vector<std::string>{"freq_hz", "full", "band_1", "band_2"});
  REQUIRE(z.size() == static_cast<std::size_t>(cfg.n_t / 2 + 2));
  for (std::size_t i = 1; i < z.size(); ++i)
    for (std::size_t c = 1; c < z[i].size(); ++c)
      REQUIRE(std::stod(z[i][c]) == 0.0);

  // White noise: band power over full power follows the zero-phase response,
  // |H|^2 in amplitude and so |H|^4 in power.
  Sinogram noise(100, cfg.n_t, cfg.dt);
  SplitMix64 rng(17);
  for (double &v : noise.data)
    v = rng.normal();
  write_sinogram(s / "noise.oat", noise);
  REQUIRE(run("spectrum --sinogram " + (s / "noise.oat").string() + " --out " + (s / "n").string(), s)
              .code == 0);
  const auto n = read_csv(s / "n" / "spectrum.csv");
  const BandFilterBank bank = make_filter_bank(cfg.bands, cfg.fs());
  int compared = 0;
  for (std::size_t i = 2; i + 1 < n.size(); ++i) {
    const double f = std::stod(n[i][0]);
    const double full = std::stod(n[i][1]);
    double sum = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double band = std::stod(n[i][2 + k]);
      sum += band;
      const auto power = [&](double ff) {
        const double h2 = std::norm(bank.bands[k].response(ff));
        return h2 * h2;
      };
      const double expect = power(f);
      // Skip bins next to a steep edge, where leakage across one bin spacing
      // dominates.
      const double df = cfg.fs() / cfg.n_t;
      if (std::min({expect, power(f - df), power(f + df)}) > 0.1) {
        INFO("f = ", f, " band ", k + 1);
        CHECK(std::abs(10.0 * std::log10(band / full / expect)) <= 1.0);
        ++compared;
      }
    }
    CHECK(10.0 * std::log10(sum / full) <= 3.0);
  }
  CHECK(compared > 50);

  CHECK(run("spectrum --sinogram " + (s / "nope.oat").string() + " --out " + (s / "x").string(), s)
            .code == 3);
}
