#include "oat/config.hpp"
#include "oat/datagen.hpp"
#include "oat/errors.hpp"
#include "oat/filters.hpp"
#include "oat/forward.hpp"
#include "oat/learned.hpp"
#include "oat/metrics.hpp"
#include "oat/parallel.hpp"
#include "oat/recon.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <memory>

namespace py = pybind11;
using namespace oat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as (ny, nx) arrays, sinograms as (n_d, n_t).
Array image_to_array(const Image &img) {
  Array out({img.grid.ny(), img.grid.nx()});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image array_to_image(const ImagingGrid &grid, const Array &a) {
  if (a.ndim() != 2 || a.shape(0) != grid.ny() || a.shape(1) != grid.nx())
    throw InvalidArgument("image array must have shape (" + std::to_string(grid.ny()) + ", " +
                          std::to_string(grid.nx()) + ")");
  return Image(grid, std::vector<double>(a.data(), a.data() + a.size()));
}

Array sinogram_to_array(const Sinogram &s) {
  Array out({s.n_d, s.n_t});
  std::copy(s.data.begin(), s.data.end(), out.mutable_data());
  return out;
}

Sinogram array_to_sinogram(const ExperimentConfig &cfg, const Array &a) {
  if (a.ndim() != 2 || a.shape(0) != static_cast<py::ssize_t>(cfg.sensors.size()) ||
      a.shape(1) != cfg.n_t)
    throw InvalidArgument("sinogram array must have shape (" + std::to_string(cfg.sensors.size()) +
                          ", " + std::to_string(cfg.n_t) + ")");
  Sinogram s(static_cast<int>(cfg.sensors.size()), cfg.n_t, cfg.dt);
  std::copy(a.data(), a.data() + a.size(), s.data.begin());
  return s;
}

Image pair_image(const Array &a) {
  if (a.ndim() != 2)
    throw InvalidArgument("metric inputs must be 2-D arrays");
  const ImagingGrid g = ImagingGrid::centered(static_cast<int>(a.shape(1)),
                                              static_cast<int>(a.shape(0)), 1.0);
  return Image(g, std::vector<double>(a.data(), a.data() + a.size()));
}

/// Forward operator and filter bank built once per configuration.
struct System {
  ExperimentConfig cfg;
  SparseOperator op;
  BandFilterBank bank;

  explicit System(ExperimentConfig c)
      : cfg(std::move(c)), op(nominal_operator(cfg)), bank(make_filter_bank(cfg.bands, cfg.fs())) {}
};

ExperimentConfig config_from_dict(const py::dict &d) {
  const std::string text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
  return parse_config(nlohmann::json::parse(text));
}

py::dict config_to_dict(const ExperimentConfig &cfg) {
  return py::module_::import("json").attr("loads")(config_to_json(cfg).dump()).cast<py::dict>();
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Optoacoustic forward model, band-split reconstruction and metrics.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p)
        std::rethrow_exception(p);
    } catch (const InvalidArgument &e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ConfigError &e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const GeometryError &e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError &e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const FormatError &e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("desk_config", [] { return config_to_dict(desk_config()); });
  m.def("full_config", [] { return config_to_dict(full_config()); });
  m.def("load_config", [](const std::filesystem::path &p) { return config_to_dict(load_config(p)); });
  m.def("set_num_threads", &set_num_threads);
  m.def("num_threads", &num_threads);

  py::class_<System>(m, "System")
      .def(py::init([](const py::dict &cfg) { return std::make_unique<System>(config_from_dict(cfg)); }),
           py::arg("config"))
      .def_property_readonly("image_shape",
                             [](const System &s) { return py::make_tuple(s.cfg.grid.ny(), s.cfg.grid.nx()); })
      .def_property_readonly("sinogram_shape",
                             [](const System &s) { return py::make_tuple(s.cfg.sensors.size(), s.cfg.n_t); })
      .def_property_readonly("bands", [](const System &s) { return s.bank.count(); })
      .def_property_readonly("trace_scale", [](const System &s) { return trace_scale(s.op); })
      .def("forward",
           [](const System &s, const Array &p0) {
             return sinogram_to_array(forward_apply(s.op, array_to_image(s.cfg.grid, p0)));
           })
      .def("adjoint",
           [](const System &s, const Array &pd) {
             return image_to_array(adjoint_apply(s.op, array_to_sinogram(s.cfg, pd)));
           })
      .def("das",
           [](const System &s, const Array &pd) {
             return image_to_array(das(array_to_sinogram(s.cfg, pd), s.cfg.grid, s.cfg.sensors, s.cfg.v_s));
           })
      .def("lbp",
           [](const System &s, const Array &pd) {
             return image_to_array(lbp(s.op, array_to_sinogram(s.cfg, pd)));
           })
      .def("tikhonov",
           [](const System &s, const Array &pd, double lambda) {
             return image_to_array(tikhonov_direct(s.op, array_to_sinogram(s.cfg, pd), lambda));
           },
           py::arg("pd"), py::arg("lam"))
      .def("fbmb",
           [](const System &s, const Array &pd, double lambda, double eta, std::vector<double> mu,
              int iters) {
             SolverOptions opts;
             opts.max_iters = iters;
             const FbmbResult r = fbmb_solve(s.op, array_to_sinogram(s.cfg, pd), s.bank, lambda, eta, mu, opts);
             py::list comps;
             for (const Image &c : r.components)
               comps.append(image_to_array(c));
             return py::make_tuple(image_to_array(r.total), comps, r.objective_trace);
           },
           py::arg("pd"), py::arg("lam"), py::arg("eta"), py::arg("mu"), py::arg("iters") = 500,
           "Returns (total, components, objective_trace).")
      .def("simulate",
           [](const System &s, std::uint64_t index, const std::string &mix, std::uint64_t seed) {
             const DatasetRecord r = simulate_record(s.cfg, index, parse_phantom_mix(mix), seed);
             return py::make_tuple(image_to_array(r.p0), sinogram_to_array(r.pd));
           },
           py::arg("index"), py::arg("mix") = "mixed", py::arg("seed") = 0,
           "Returns (p0, pd) for one simulated record.");

  m.def("rmse", [](const Array &a, const Array &b) { return rmse(pair_image(a), pair_image(b)); });
  m.def("psnr", [](const Array &a, const Array &b) { return psnr(pair_image(a), pair_image(b)); });
  m.def("pearson", [](const Array &a, const Array &b) { return pearson(pair_image(a), pair_image(b)); });
  m.def("ssim", [](const Array &a, const Array &b) { return ssim(pair_image(a), pair_image(b)); });
}
