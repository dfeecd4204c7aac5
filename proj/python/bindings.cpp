#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "xmerge/checkpoint_store.hpp"
#include "xmerge/error.hpp"
#include "xmerge/extra_merge.hpp"
#include "xmerge/merge_engine.hpp"
#include "xmerge/oracle.hpp"
#include "xmerge/river_valley.hpp"
#include "xmerge/subspace_pca.hpp"
#include "xmerge/toy_trainer.hpp"

namespace py = pybind11;
using namespace xmerge;

namespace {

std::vector<ParameterVector> to_states(const std::vector<std::vector<double>>& rows) {
  return {rows.begin(), rows.end()};
}

LossFn wrap_loss(const std::function<double(std::vector<double>)>& fn) {
  return [fn](const ParameterVector& p) { return fn(p.values()); };
}

LineSearchConfig search_config(double alpha, std::size_t max_steps, const std::vector<double>& grid) {
  LineSearchConfig c;
  c.alpha = alpha;
  c.max_steps = max_steps;
  if (!grid.empty()) {
    c.mode = SearchMode::kGrid;
    c.grid = grid;
  }
  return c;
}

py::dict search_dict(const LineSearchResult& r) {
  py::dict d;
  std::vector<std::tuple<std::size_t, double, double>> cands;
  for (const auto& c : r.candidates) cands.emplace_back(c.k, c.multiplier, c.loss);
  d["anchor_loss"] = r.anchor_loss;
  d["delta"] = r.delta;
  d["candidates"] = cands;
  d["best_k"] = r.best_k;
  d["best_multiplier"] = r.best_multiplier;
  d["best_loss"] = r.best_loss;
  d["best_params"] = r.best_params.values();
  d["terminated_by"] = termination_name(r.terminated_by);
  return d;
}

py::dict subspace_dict(const SubspaceResult& r) {
  py::dict d;
  d["u1"] = r.u1.values();
  d["direction"] = r.direction.values();
  d["eigvals"] = r.eigvals;
  d["evr"] = r.evr;
  d["projections"] = r.projections;
  d["oriented"] = r.oriented;
  return d;
}

}  // namespace

PYBIND11_MODULE(_xmerge, m) {
  m.doc() = "Checkpoint merging, rank-1 subspace analysis and extrapolation";

  static py::exception<Error> base(m, "XmergeError", PyExc_RuntimeError);
  static py::object usage_error = py::reinterpret_steal<py::object>(
      PyErr_NewException("_xmerge.UsageError", base.ptr(), nullptr));
  static py::object data_error = py::reinterpret_steal<py::object>(
      PyErr_NewException("_xmerge.DataError", base.ptr(), nullptr));
  static py::object numerical_error = py::reinterpret_steal<py::object>(
      PyErr_NewException("_xmerge.NumericalError", base.ptr(), nullptr));
  m.attr("UsageError") = usage_error;
  m.attr("DataError") = data_error;
  m.attr("NumericalError") = numerical_error;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& type = e.kind() == ErrorKind::kUsage  ? usage_error
                               : e.kind() == ErrorKind::kData ? data_error
                                                              : numerical_error;
      PyErr_SetString(type.ptr(), e.what());
    }
  });

  // checkpoint_store
  py::class_<CheckpointRecord>(m, "CheckpointRecord")
      .def_readonly("step", &CheckpointRecord::step)
      .def_readonly("path", &CheckpointRecord::path)
      .def_readonly("dim", &CheckpointRecord::dim)
      .def_readonly("checksum", &CheckpointRecord::checksum)
      .def("__repr__", [](const CheckpointRecord& r) {
        return "CheckpointRecord(step=" + std::to_string(r.step) + ", path='" + r.path.string() +
               "', dim=" + std::to_string(r.dim) + ")";
      });
  m.def("crc64", [](py::bytes data) {
    const std::string s = data;
    return Crc64::of({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  });
  m.def(
      "write_checkpoint",
      [](const std::vector<double>& values, std::uint64_t step, const std::filesystem::path& path) {
        return write_checkpoint(ParameterVector(values), step, path);
      },
      py::arg("values"), py::arg("step"), py::arg("path"));
  m.def(
      "read_checkpoint", [](const std::filesystem::path& path) { return read_checkpoint(inspect_checkpoint(path)).values(); },
      py::arg("path"));
  m.def(
      "read_checkpoint", [](const CheckpointRecord& record) { return read_checkpoint(record).values(); },
      py::arg("record"), "Reads and verifies against the checksum stored in the record");

  py::class_<CheckpointManifest>(m, "CheckpointManifest")
      .def(py::init<>())
      .def_static("load", &CheckpointManifest::load, py::arg("path"))
      .def("add", &CheckpointManifest::add)
      .def("save", &CheckpointManifest::save, py::arg("path"))
      .def_property_readonly("records", &CheckpointManifest::records)
      .def_property_readonly("dim", &CheckpointManifest::dim)
      .def("__len__", &CheckpointManifest::size);

  // merge_engine
  m.def("uniform_weights", &uniform_weights, py::arg("n"));
  m.def("ema_weights", &ema_weights, py::arg("n"), py::arg("gamma"));
  m.def(
      "weighted_average",
      [](const std::vector<std::vector<double>>& states, const std::vector<double>& weights) {
        return weighted_average(to_states(states), weights).values();
      },
      py::arg("states"), py::arg("weights"));
  m.def(
      "sliding_pma",
      [](const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n, std::size_t count) {
        std::vector<std::pair<std::uint64_t, std::vector<double>>> out;
        for (auto& mc : sliding_pma(manifest, tau, n, count)) out.emplace_back(mc.anchor_step, mc.params.values());
        return out;
      },
      py::arg("manifest"), py::arg("tau"), py::arg("n"), py::arg("count"));

  // subspace_pca
  m.def(
      "analyze_subspace",
      [](const std::vector<std::vector<double>>& states) { return subspace_dict(analyze_subspace(to_states(states))); },
      py::arg("states"));
  m.def(
      "classify_profile", [](const std::vector<double>& losses) { return shape_name(classify_profile(losses)); },
      py::arg("losses"));
  m.def(
      "interpolation_scan",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t grid,
         const std::function<double(std::vector<double>)>& loss) {
        const auto p = interpolation_scan(ParameterVector(a), ParameterVector(b), grid, wrap_loss(loss));
        return py::make_tuple(p.alphas, p.losses, shape_name(p.classification));
      },
      py::arg("a"), py::arg("b"), py::arg("grid_size"), py::arg("loss"));

  // extra_merge
  m.def("adaptive_stride", &adaptive_stride, py::arg("z_newest"), py::arg("z_previous"), py::arg("alpha") = 0.1);
  m.def(
      "line_search",
      [](const std::vector<double>& anchor, const std::vector<double>& direction, double delta,
         const std::function<double(std::vector<double>)>& loss, double alpha, std::size_t max_steps,
         const std::vector<double>& grid) {
        return search_dict(line_search(ParameterVector(anchor), ParameterVector(direction), delta, wrap_loss(loss),
                                       search_config(alpha, max_steps, grid)));
      },
      py::arg("anchor"), py::arg("direction"), py::arg("delta"), py::arg("loss"), py::arg("alpha") = 0.1,
      py::arg("max_steps") = 20, py::arg("grid") = std::vector<double>{});
  m.def(
      "extrapolate",
      [](const std::vector<std::vector<double>>& merged, const std::function<double(std::vector<double>)>& loss,
         double alpha, std::size_t max_steps) {
        const auto r = extrapolate(to_states(merged), search_config(alpha, max_steps, {}), wrap_loss(loss));
        py::dict d = search_dict(r.search);
        d["subspace"] = subspace_dict(r.subspace);
        return d;
      },
      py::arg("merged"), py::arg("loss"), py::arg("alpha") = 0.1, py::arg("max_steps") = 20);
  m.def(
      "run_extra_merge",
      [](const CheckpointManifest& manifest, std::uint64_t tau, std::size_t n, std::size_t K, const std::string& oracle,
         double alpha, std::size_t max_steps) {
        const auto r = run_extra_merge(manifest, tau, n, K, search_config(alpha, max_steps, {}),
                                       make_loss_oracle(oracle));
        py::dict d = search_dict(r.search);
        d["subspace"] = subspace_dict(r.subspace);
        d["merged_steps"] = r.merged_steps;
        return d;
      },
      py::arg("manifest"), py::arg("tau"), py::arg("n"), py::arg("K"), py::arg("oracle"), py::arg("alpha") = 0.1,
      py::arg("max_steps") = 20);
  m.def(
      "loss_oracle",
      [](const std::string& descriptor) {
        LossFn fn = make_loss_oracle(descriptor);
        return std::function<double(std::vector<double>)>(
            [fn](std::vector<double> p) { return fn(ParameterVector(std::move(p))); });
      },
      py::arg("descriptor"));

  // river_valley
  py::class_<ValleySpec>(m, "ValleySpec")
      .def(py::init<>())
      .def_readwrite("dim", &ValleySpec::dim)
      .def_readwrite("eta", &ValleySpec::eta)
      .def_readwrite("sigma", &ValleySpec::sigma)
      .def_readwrite("mu_f", &ValleySpec::mu_f)
      .def_readwrite("ell_prime0", &ValleySpec::ell_prime0)
      .def_readwrite("river_curvature", &ValleySpec::river_curvature)
      .def_readwrite("lambdas", &ValleySpec::lambdas)
      .def_readwrite("river", &ValleySpec::river)
      .def_readwrite("w_star", &ValleySpec::w_star)
      .def_readwrite("basis_seed", &ValleySpec::basis_seed)
      .def("drift", &ValleySpec::drift)
      .def("validate", &ValleySpec::validate);
  m.def("default_valley_spec", &default_valley_spec);
  m.def("high_noise_valley_spec", &high_noise_valley_spec);
  m.def("with_snr", &with_snr, py::arg("spec"), py::arg("rho"), py::arg("N"), py::arg("K"), py::arg("T"));
  m.def("exact_avg_deviation", &exact_avg_deviation, py::arg("spec"), py::arg("N"), py::arg("T"));
  m.def(
      "bound_avg_deviation",
      [](const ValleySpec& s, std::size_t N, std::size_t T) {
        const auto b = bound_avg_deviation(s, N, T);
        return py::make_tuple(b.bound, b.epsilon);
      },
      py::arg("spec"), py::arg("N"), py::arg("T"));
  m.def(
      "monte_carlo_avg_deviation",
      [](const ValleySpec& s, std::size_t N, std::size_t T, std::size_t seeds, std::uint64_t base_seed) {
        const auto e = monte_carlo_avg_deviation(s, N, T, seeds, base_seed);
        return py::make_tuple(e.mean, e.std_error);
      },
      py::arg("spec"), py::arg("N"), py::arg("T"), py::arg("n_seeds"), py::arg("base_seed") = 1);
  m.def("signal_variance", &signal_variance, py::arg("delta_t"), py::arg("K"));
  m.def("snr_exact", &snr_exact, py::arg("spec"), py::arg("N"), py::arg("K"), py::arg("T"));
  m.def(
      "valley_loss", [](const ValleySpec& s, const std::vector<double>& w) { return valley_loss(s, ParameterVector(w)); },
      py::arg("spec"), py::arg("w"));

  // toy_trainer
  py::class_<ToyTaskConfig>(m, "ToyTaskConfig")
      .def(py::init<>())
      .def_property(
          "model", [](const ToyTaskConfig& c) { return std::string(family_name(c.model)); },
          [](ToyTaskConfig& c, const std::string& v) {
            c = toy_config_from_kv({{"model", v}}, c);
          })
      .def_readwrite("in_dim", &ToyTaskConfig::in_dim)
      .def_readwrite("hidden_dim", &ToyTaskConfig::hidden_dim)
      .def_readwrite("out_dim", &ToyTaskConfig::out_dim)
      .def_readwrite("n_train", &ToyTaskConfig::n_train)
      .def_readwrite("n_val", &ToyTaskConfig::n_val)
      .def_readwrite("batch_size", &ToyTaskConfig::batch_size)
      .def_readwrite("lr", &ToyTaskConfig::lr)
      .def_readwrite("steps", &ToyTaskConfig::steps)
      .def_readwrite("save_every", &ToyTaskConfig::save_every)
      .def_readwrite("seed", &ToyTaskConfig::seed)
      .def_readwrite("noise_scale", &ToyTaskConfig::noise_scale)
      .def_readwrite("init_scale", &ToyTaskConfig::init_scale);
  m.def(
      "train_toy",
      [](const ToyTaskConfig& config, const std::filesystem::path& out_dir) {
        const auto r = train(config, out_dir);
        std::vector<std::tuple<std::size_t, double, double>> curve;
        for (const auto& p : r.curve) curve.emplace_back(p.step, p.train_loss, p.val_loss);
        return py::make_tuple(r.manifest, curve);
      },
      py::arg("config"), py::arg("out_dir"));
}
