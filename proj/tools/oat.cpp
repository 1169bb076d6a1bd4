// Command-line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 I/O error, 4 numerical failure.

#include "oat/config.hpp"
#include "oat/datagen.hpp"
#include "oat/errors.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"
#include "oat/learned.hpp"
#include "oat/metrics.hpp"
#include "oat/parallel.hpp"
#include "oat/recon.hpp"
#include "oat/tensor_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef OAT_VERSION
#define OAT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Collects what a command did and writes run_manifest.json into its output
// directory once the command has finished.
class RunManifest {
public:
  RunManifest(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)) {}

  template <class Fn> auto stage(const std::string &name, Fn &&fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      RunManifest *self;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        self->timings_[name] +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } rec{this, name, t0};
    return fn();
  }

  void set_config(const oat::ExperimentConfig &cfg) { config_ = oat::config_to_json(cfg); }
  void seed(const std::string &name, std::uint64_t value) { seeds_[name] = value; }
  void output(const fs::path &p) { outputs_.push_back(p.string()); }
  void extra(const std::string &key, json value) { extra_[key] = std::move(value); }

  void write(const fs::path &dir) const {
    json doc = {{"command", command_},
                {"argv", argv_},
                {"tool_version", OAT_VERSION},
                {"threads", oat::num_threads()},
                {"config", config_},
                {"seeds", seeds_},
                {"timings_s", timings_},
                {"outputs", outputs_}};
    for (const auto &[k, v] : extra_.items())
      doc[k] = v;
    oat::write_file_atomic(dir / "run_manifest.json", doc.dump(2) + "\n");
  }

private:
  std::string command_;
  std::vector<std::string> argv_;
  json config_ = nullptr;
  json seeds_ = json::object();
  std::map<std::string, double> timings_;
  std::vector<std::string> outputs_;
  json extra_ = json::object();
};

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw oat::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path &path, const std::string &text) { oat::write_file_atomic(path, text); }

oat::ExperimentConfig config_or(const std::string &path, oat::ExperimentConfig fallback) {
  return path.empty() ? fallback : oat::load_config(path);
}

// Sorted files in `dir` whose names start with `prefix` and end in ".oat".
std::vector<fs::path> tensor_files(const fs::path &dir, const std::string &prefix) {
  if (!fs::is_directory(dir))
    throw oat::IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto &e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind(prefix, 0) == 0 && e.path().extension() == ".oat")
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

oat::Image sum_images(const std::vector<oat::Image> &parts) {
  oat::Image total(parts.front().grid);
  for (const oat::Image &p : parts)
    for (std::size_t j = 0; j < total.size(); ++j)
      total[j] += p[j];
  return total;
}

std::vector<double> parse_list(const std::string &text, const char *flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size())
        throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw UsageError(std::string(flag) + ": not a number: '" + item + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config;
  int count = 1;
  std::string phantom = "mixed";
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_simulate(const SimulateArgs &a, RunManifest &run) {
  const oat::ExperimentConfig cfg = config_or(a.config, oat::desk_config());
  if (a.count < 1)
    throw UsageError("--count must be >= 1");
  oat::PhantomMix mix;
  try {
    mix = oat::parse_phantom_mix(a.phantom);
  } catch (const oat::InvalidArgument &e) {
    throw UsageError(e.what());
  }
  run.set_config(cfg);
  run.seed("master", a.seed);
  ensure_dir(a.out);
  run.stage("simulate", [&] { return oat::generate_dataset(cfg, a.count, mix, a.seed, a.out); });
  run.output(fs::path(a.out) / "manifest.json");
  run.extra("count", a.count);
}

// ------------------------------------------------------------- reconstruct

struct ReconstructArgs {
  std::string method;
  std::string config;
  std::string sinogram;
  std::string out;
  std::string model;
  double lambda = -1.0;
  double lambda_rel = -1.0;
  double eta = -1.0;
  std::string mu;
  int iters = 500;
  std::string solver = "direct";
};

const std::vector<std::string> kMethods{"das", "ubp", "lbp", "tikhonov", "fbmb", "learned"};

struct Reconstructor {
  const ReconstructArgs &a;
  oat::ExperimentConfig cfg;
  oat::SparseOperator op;
  oat::BandFilterBank bank;
  double lambda = 0.0;
  std::vector<double> mu;
  double eta = 0.0;
  std::optional<oat::LinearBandModel> model;

  Reconstructor(const ReconstructArgs &args, oat::ExperimentConfig c)
      : a(args), cfg(std::move(c)), op(oat::nominal_operator(cfg)),
        bank(oat::make_filter_bank(cfg.bands, cfg.fs())) {
    const double scale = oat::trace_scale(op);
    if (a.lambda >= 0.0)
      lambda = a.lambda;
    else if (a.lambda_rel >= 0.0)
      lambda = a.lambda_rel * scale;
    else
      lambda = cfg.lambda > 0.0 ? cfg.lambda : 1e-3 * scale;
    eta = a.eta >= 0.0 ? a.eta : cfg.eta;
    mu = a.mu.empty() ? cfg.mu : parse_list(a.mu, "--mu");
    if (static_cast<int>(mu.size()) != bank.count())
      throw UsageError("--mu needs one weight per band (" + std::to_string(bank.count()) + ")");
    if (a.method == "learned") {
      model = oat::load_model(a.model);
      if (!(model->grid == cfg.grid))
        throw UsageError("model grid does not match the configuration grid");
    }
  }

  // Writes the outputs for one sinogram; `tag` is "" for a single file or
  // "_%06d" in dataset mode.
  void run(const oat::Sinogram &pd, const fs::path &out, const std::string &tag,
           RunManifest &manifest) const {
    const auto image_out = [&](const std::string &stem, const oat::Image &img) {
      const fs::path p = out / (stem + tag + ".oat");
      oat::write_image(p, img);
      manifest.output(p);
    };
    const std::string &m = a.method;
    if (m == "das" || m == "ubp" || m == "lbp" || m == "tikhonov") {
      const oat::Image img = manifest.stage("reconstruct", [&] {
        if (m == "das")
          return oat::das(pd, cfg.grid, cfg.sensors, cfg.v_s);
        if (m == "ubp")
          return oat::ubp(pd, cfg.grid, cfg.sensors, cfg.v_s);
        if (m == "lbp")
          return oat::lbp(op, pd);
        if (a.solver == "direct")
          return oat::tikhonov_direct(op, pd, lambda);
        oat::SolverOptions so;
        so.max_iters = a.iters;
        return oat::tikhonov_lsqr(op, pd, lambda, so).image;
      });
      image_out("image", img);
      if (tag.empty()) {
        oat::write_pgm_preview(out / "image.pgm", img);
        manifest.output(out / "image.pgm");
      }
      return;
    }
    if (m == "fbmb") {
      oat::SolverOptions so;
      so.max_iters = a.iters;
      const oat::FbmbResult r =
          manifest.stage("reconstruct", [&] { return oat::fbmb_solve(op, pd, bank, lambda, eta, mu, so); });
      for (int k = 0; k < bank.count(); ++k)
        image_out("component_" + std::to_string(k + 1), r.components[k]);
      image_out("image", r.total);
      std::string csv = "iteration,objective\n";
      for (std::size_t i = 0; i < r.objective_trace.size(); ++i)
        csv += std::to_string(i) + "," + csv_number(r.objective_trace[i]) + "\n";
      const fs::path trace = out / ("objective" + tag + ".csv");
      write_text(trace, csv);
      manifest.output(trace);
      if (tag.empty()) {
        oat::write_pgm_preview(out / "image.pgm", r.total);
        manifest.output(out / "image.pgm");
        manifest.extra("fbmb", {{"iterations", r.iterations_used},
                                {"converged", r.converged},
                                {"step", r.step},
                                {"lambda", lambda},
                                {"eta", eta},
                                {"mu", mu}});
      }
      return;
    }
    // learned
    const auto parts = manifest.stage("reconstruct", [&] { return oat::model_forward(*model, pd, op); });
    for (std::size_t k = 0; k < parts.size(); ++k)
      image_out("component_" + std::to_string(k + 1), parts[k]);
    const oat::Image total = sum_images(parts);
    image_out("image", total);
    if (tag.empty()) {
      oat::write_pgm_preview(out / "image.pgm", total);
      manifest.output(out / "image.pgm");
    }
  }
};

void cmd_reconstruct(const ReconstructArgs &a, RunManifest &run) {
  if (std::find(kMethods.begin(), kMethods.end(), a.method) == kMethods.end())
    throw UsageError("unknown method '" + a.method + "'");
  if (a.method == "learned" && a.model.empty())
    throw UsageError("method learned requires --model");
  if (a.solver != "direct" && a.solver != "lsqr")
    throw UsageError("--solver must be direct or lsqr");
  if (a.iters < 1)
    throw UsageError("--iters must be >= 1");
  const oat::ExperimentConfig cfg = config_or(a.config, oat::desk_config());
  run.set_config(cfg);
  const Reconstructor rec = run.stage("setup", [&] { return Reconstructor(a, cfg); });
  run.extra("method", a.method);
  run.extra("lambda", rec.lambda);
  ensure_dir(a.out);
  if (fs::is_directory(a.sinogram)) {
    const auto files = tensor_files(a.sinogram, "pd_");
    if (files.empty())
      throw oat::IoError("no pd_*.oat files in " + a.sinogram);
    for (const fs::path &f : files) {
      const oat::Sinogram pd = run.stage("read", [&] { return oat::read_sinogram(f, cfg.dt); });
      std::string id = f.stem().string().substr(3);
      rec.run(pd, a.out, "_" + id, run);
    }
  } else {
    const oat::Sinogram pd = run.stage("read", [&] { return oat::read_sinogram(a.sinogram, cfg.dt); });
    rec.run(pd, a.out, "", run);
  }
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::string dataset;
  int epochs = 10;
  int batch = 2;
  double lr = 1e-4;
  double lr_decay = 1.0;
  bool clamp = false;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  std::string out;
};

void cmd_train(const TrainArgs &a, RunManifest &run) {
  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0))
    throw UsageError("--val-fraction must lie in [0, 1)");
  const oat::ExperimentConfig data_cfg = oat::dataset_config(a.dataset);
  const oat::ExperimentConfig cfg = a.config.empty() ? data_cfg : oat::load_config(a.config);
  if (!(cfg.grid == data_cfg.grid) || cfg.n_t != data_cfg.n_t)
    throw UsageError("--config geometry differs from the dataset's");
  run.set_config(cfg);
  run.seed("shuffle", a.seed);

  const oat::Dataset ds = run.stage("load", [&] { return oat::load_dataset(a.dataset, cfg); });
  const auto n_val = static_cast<std::size_t>(a.val_fraction * static_cast<double>(ds.records.size()));
  if (ds.records.size() - n_val < 1)
    throw UsageError("dataset too small for the requested validation split");
  std::vector<oat::TrainingSample> train, val;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    (i < ds.records.size() - n_val ? train : val).push_back({ds.records[i].pd, ds.records[i].p0});

  const oat::SparseOperator op = oat::nominal_operator(cfg);
  const oat::BandFilterBank bank = oat::make_filter_bank(cfg.bands, cfg.fs());
  oat::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.lr_decay = a.lr_decay;
  tc.seed = a.seed;
  tc.eta = cfg.eta;
  tc.eta_i = cfg.eta_i;
  tc.mu = cfg.mu;
  try {
    tc.validate(bank.count());
  } catch (const oat::InvalidArgument &e) {
    throw UsageError(e.what());
  }

  oat::LinearBandModel model = oat::zero_model(cfg.grid, bank.count());
  model.clamp_outputs = a.clamp;
  const oat::TrainHistory h =
      run.stage("train", [&] { return oat::train_model(model, train, val, op, bank, tc); });
  model.training["dataset"] = fs::absolute(a.dataset).string();

  ensure_dir(a.out);
  oat::save_model(model, a.out);
  std::string csv = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e)
    csv += std::to_string(e + 1) + "," + csv_number(h.train_loss[e]) + "," +
           (h.val_loss.empty() ? std::string() : csv_number(h.val_loss[e])) + "\n";
  write_text(fs::path(a.out) / "loss.csv", csv);
  for (int k = 0; k < model.bands(); ++k)
    run.output(fs::path(a.out) / ("W_" + std::to_string(k + 1) + ".oat"));
  run.output(fs::path(a.out) / "model.json");
  run.output(fs::path(a.out) / "loss.csv");
  run.extra("train_size", train.size());
  run.extra("val_size", val.size());
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string pred_dir;
  std::string truth_dir;
  std::string label;
  std::string out;
  bool raw = false;
};

oat::Image read_any_image(const fs::path &p) {
  const oat::Tensor t = oat::read_tensor(p);
  if (t.shape.size() != 2)
    throw oat::FormatError(p.string() + ": expected a rank-2 image tensor");
  const oat::ImagingGrid g = oat::ImagingGrid::centered(static_cast<int>(t.shape[1]),
                                                        static_cast<int>(t.shape[0]), 1.0);
  return oat::Image(g, t.data);
}

void cmd_evaluate(const EvaluateArgs &a, RunManifest &run) {
  // Dataset directories hold p0_*.oat; reconstruction directories image*.oat.
  const auto pick = [](const fs::path &dir) {
    auto files = tensor_files(dir, "p0_");
    return files.empty() ? tensor_files(dir, "image") : files;
  };
  const auto preds = pick(a.pred_dir);
  const auto truths = pick(a.truth_dir);
  if (preds.empty() || preds.size() != truths.size())
    throw oat::IoError("prediction/truth count mismatch: " + std::to_string(preds.size()) + " vs " +
                       std::to_string(truths.size()));
  std::vector<oat::Image> p, t;
  run.stage("read", [&] {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p.push_back(read_any_image(preds[i]));
      t.push_back(read_any_image(truths[i]));
      if (p.back().grid.nx() != t.back().grid.nx() || p.back().grid.ny() != t.back().grid.ny())
        throw oat::IoError("shape mismatch between " + preds[i].string() + " and " +
                           truths[i].string());
    }
    return 0;
  });
  const oat::MetricReport rep =
      run.stage("evaluate", [&] { return oat::evaluate_suite(p, t, a.label, !a.raw); });
  ensure_dir(a.out);
  write_text(fs::path(a.out) / "report.json", rep.to_json().dump(2) + "\n");
  run.output(fs::path(a.out) / "report.json");
  std::printf("%s: n=%zu ssim %.4f pc %.4f rmse %.4f psnr %.2f\n", a.label.c_str(), rep.n(),
              rep.ssim.mean, rep.pc.mean, rep.rmse.mean, rep.psnr.mean);
}

// ------------------------------------------------------------------ bench

struct BenchArgs {
  std::string methods = "das,lbp,fbmb";
  std::string config;
  int repeat = 5;
  int fbmb_iters = 50;
  std::string out;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void cmd_bench(const BenchArgs &a, RunManifest &run) {
  std::vector<std::string> methods;
  {
    std::stringstream ss(a.methods);
    std::string m;
    while (std::getline(ss, m, ','))
      methods.push_back(m);
  }
  const std::vector<std::string> known{"das", "ubp", "lbp", "tikhonov", "fbmb"};
  for (const auto &m : methods)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw UsageError("unknown bench method '" + m + "'");
  if (a.repeat < 1)
    throw UsageError("--repeat must be >= 1");
  const oat::ExperimentConfig cfg = config_or(a.config, oat::full_config());
  run.set_config(cfg);

  const oat::SparseOperator op = run.stage("assemble", [&] { return oat::nominal_operator(cfg); });
  const oat::BandFilterBank bank = oat::make_filter_bank(cfg.bands, cfg.fs());
  const oat::Image p0 = oat::vessel_phantom(cfg.grid, 1);
  const oat::Sinogram pd = oat::forward_apply(op, p0);
  const double lambda = 1e-3 * oat::trace_scale(op);

  std::string csv = "method,run,seconds\n";
  json summary = json::object();
  for (const auto &m : methods) {
    std::vector<double> secs;
    for (int r = 0; r < a.repeat; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      if (m == "das")
        (void)oat::das(pd, cfg.grid, cfg.sensors, cfg.v_s);
      else if (m == "ubp")
        (void)oat::ubp(pd, cfg.grid, cfg.sensors, cfg.v_s);
      else if (m == "lbp")
        (void)oat::lbp(op, pd);
      else if (m == "tikhonov") {
        oat::SolverOptions so;
        so.max_iters = 100;
        (void)oat::tikhonov_lsqr(op, pd, lambda, so);
      } else {
        oat::SolverOptions so;
        so.max_iters = a.fbmb_iters;
        so.rel_tol = 1e-300; // fixed iteration count
        (void)oat::fbmb_solve(op, pd, bank, lambda, cfg.eta, cfg.mu, so);
      }
      secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      csv += m + "," + std::to_string(r + 1) + "," + csv_number(secs.back()) + "\n";
    }
    const double med = median(secs), mn = *std::min_element(secs.begin(), secs.end());
    csv += m + ",median," + csv_number(med) + "\n";
    csv += m + ",min," + csv_number(mn) + "\n";
    summary[m] = {{"median_s", med}, {"min_s", mn}};
    std::printf("%-9s median %.4f s  min %.4f s\n", m.c_str(), med, mn);
  }
  ensure_dir(a.out);
  write_text(fs::path(a.out) / "bench.csv", csv);
  run.output(fs::path(a.out) / "bench.csv");
  run.extra("bench", summary);
  run.extra("fbmb_iters", a.fbmb_iters);
}

// --------------------------------------------------------------- spectrum

struct SpectrumArgs {
  std::string sinogram;
  std::string config;
  std::string out;
};

void cmd_spectrum(const SpectrumArgs &a, RunManifest &run) {
  const oat::ExperimentConfig cfg = config_or(a.config, oat::desk_config());
  run.set_config(cfg);
  const oat::Sinogram s = oat::read_sinogram(a.sinogram, cfg.dt);
  const oat::BandFilterBank bank = oat::make_filter_bank(cfg.bands, cfg.fs());
  const oat::PowerSpectrum full = oat::mean_power_spectrum(s);
  std::vector<oat::PowerSpectrum> bands;
  run.stage("spectrum", [&] {
    for (int k = 0; k < bank.count(); ++k)
      bands.push_back(oat::mean_power_spectrum(oat::band_pass_sinogram(bank, k, s)));
    return 0;
  });
  std::string csv = "freq_hz,full";
  for (int k = 0; k < bank.count(); ++k)
    csv += ",band_" + std::to_string(k + 1);
  csv += "\n";
  for (std::size_t m = 0; m < full.frequency.size(); ++m) {
    csv += csv_number(full.frequency[m]) + "," + csv_number(full.power[m]);
    for (const auto &b : bands)
      csv += "," + csv_number(b.power[m]);
    csv += "\n";
  }
  ensure_dir(a.out);
  write_text(fs::path(a.out) / "spectrum.csv", csv);
  run.output(fs::path(a.out) / "spectrum.csv");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Optoacoustic tomography simulation and reconstruction (version " OAT_VERSION ")\n"
               "Every command writes run_manifest.json into its --out directory."};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads,
                 "Worker threads (0: OAT_THREADS, else OpenMP default); 1 is bitwise deterministic");
  app.set_version_flag("--version", OAT_VERSION);

  SimulateArgs sim;
  auto *c_sim = app.add_subcommand("simulate", "Simulate a dataset.\n"
                                               "Outputs: p0_NNNNNN.oat, pd_NNNNNN.oat, manifest.json");
  c_sim->add_option("--config", sim.config, "Experiment config JSON (default: desk config)");
  c_sim->add_option("--count", sim.count, "Number of records")->required();
  c_sim->add_option("--phantom", sim.phantom, "shapes | vessels | mixed");
  c_sim->add_option("--seed", sim.seed, "Master seed");
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  ReconstructArgs rec;
  auto *c_rec = app.add_subcommand(
      "reconstruct",
      "Reconstruct one sinogram or every pd_*.oat of a dataset directory.\n"
      "Outputs: image.oat + image.pgm; fbmb and learned add component_K.oat,\n"
      "fbmb adds objective.csv. In dataset mode names carry the record id\n"
      "(image_NNNNNN.oat) and no previews are written.");
  c_rec->add_option("--method", rec.method, "das | ubp | lbp | tikhonov | fbmb | learned")->required();
  c_rec->add_option("--config", rec.config, "Experiment config JSON (default: desk config)");
  c_rec->add_option("--sinogram", rec.sinogram, "Sinogram tensor or dataset directory")->required();
  c_rec->add_option("--out", rec.out, "Output directory")->required();
  c_rec->add_option("--model", rec.model, "Trained model directory (learned)");
  c_rec->add_option("--lambda", rec.lambda, "Absolute Tikhonov weight");
  c_rec->add_option("--lambda-rel", rec.lambda_rel,
                    "Tikhonov weight in units of trace(A^T A)/N (default 1e-3 unless the config sets one)");
  c_rec->add_option("--eta", rec.eta, "fbmb band-penalty weight (default: config)");
  c_rec->add_option("--mu", rec.mu, "fbmb per-band weights, comma separated (default: config)");
  c_rec->add_option("--iters", rec.iters, "Iteration limit for fbmb and lsqr");
  c_rec->add_option("--solver", rec.solver, "tikhonov solver: direct | lsqr");

  TrainArgs tr;
  auto *c_tr = app.add_subcommand("train", "Train the linear multi-band model.\n"
                                           "Outputs: W_K.oat, model.json, loss.csv");
  c_tr->add_option("--config", tr.config, "Override loss weights (geometry must match the dataset)");
  c_tr->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  c_tr->add_option("--epochs", tr.epochs, "Epochs");
  c_tr->add_option("--batch", tr.batch, "Minibatch size");
  c_tr->add_option("--lr", tr.lr, "Adam learning rate");
  c_tr->add_option("--lr-decay", tr.lr_decay, "Learning-rate factor applied after every epoch");
  c_tr->add_flag("--clamp", tr.clamp, "Clamp outputs at zero (ReLU variant)");
  c_tr->add_option("--seed", tr.seed, "Shuffle seed");
  c_tr->add_option("--val-fraction", tr.val_fraction, "Trailing fraction of records held out");
  c_tr->add_option("--out", tr.out, "Model output directory")->required();

  EvaluateArgs ev;
  auto *c_ev = app.add_subcommand("evaluate", "Score predictions against ground truth.\n"
                                              "Reads p0_*.oat (datasets) or image*.oat files.\n"
                                              "Outputs: report.json");
  c_ev->add_option("--pred-dir", ev.pred_dir, "Prediction directory")->required();
  c_ev->add_option("--truth-dir", ev.truth_dir, "Ground-truth directory")->required();
  c_ev->add_option("--label", ev.label, "Report label")->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_flag("--raw", ev.raw, "Skip min-max normalization of predictions");

  BenchArgs be;
  auto *c_be = app.add_subcommand("bench", "Time reconstructions (default: full-scale config).\n"
                                           "Outputs: bench.csv (method,run,seconds + median/min rows)");
  c_be->add_option("--methods", be.methods, "Comma-separated: das,ubp,lbp,tikhonov,fbmb");
  c_be->add_option("--config", be.config, "Experiment config JSON");
  c_be->add_option("--repeat", be.repeat, "Runs per method");
  c_be->add_option("--fbmb-iters", be.fbmb_iters, "fbmb iterations per run");
  c_be->add_option("--out", be.out, "Output directory")->required();

  SpectrumArgs sp;
  auto *c_sp = app.add_subcommand("spectrum", "Mean power spectrum of a sinogram and its bands.\n"
                                              "Outputs: spectrum.csv (freq_hz,full,band_1..band_n)");
  c_sp->add_option("--sinogram", sp.sinogram, "Sinogram tensor")->required();
  c_sp->add_option("--config", sp.config, "Experiment config JSON (default: desk config)");
  c_sp->add_option("--out", sp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  std::vector<std::string> args(argv, argv + argc);
  const std::string command = app.get_subcommands().front()->get_name();
  RunManifest run(command, args);
  std::string out;
  try {
    oat::set_num_threads(threads);
    if (*c_sim) {
      out = sim.out;
      cmd_simulate(sim, run);
    } else if (*c_rec) {
      out = rec.out;
      cmd_reconstruct(rec, run);
    } else if (*c_tr) {
      out = tr.out;
      cmd_train(tr, run);
    } else if (*c_ev) {
      out = ev.out;
      cmd_evaluate(ev, run);
    } else if (*c_be) {
      out = be.out;
      cmd_bench(be, run);
    } else {
      out = sp.out;
      cmd_spectrum(sp, run);
    }
    run.write(out);
    return 0;
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oat::ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oat::GeometryError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oat::IoError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const oat::FormatError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const oat::TrainingDiverged &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const oat::Divergence &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const oat::SingularSystem &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const oat::UndefinedCorrelation &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const oat::InvalidArgument &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
