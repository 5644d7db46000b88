#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "physssm/config.hpp"
#include "physssm/errors.hpp"
#include "physssm/experiments.hpp"
#include "physssm/io.hpp"
#include "physssm/ssm.hpp"
#include "physssm/train.hpp"

namespace py = pybind11;
using namespace physssm;

namespace {

/// Steps as rows: (T x dim).
Matrix stack_rows(const std::vector<Vector>& xs) {
  if (xs.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(xs.size()), xs.front().size());
  for (std::size_t i = 0; i < xs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
  return out;
}

std::vector<Vector> split_rows(const Matrix& m) {
  std::vector<Vector> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
  return out;
}

py::dict trajectory_dict(const IrregularTrajectory& tr) {
  py::dict d;
  d["times"] = tr.times;
  d["observations"] = stack_rows(tr.observations);
  d["clean_observations"] = stack_rows(tr.clean_observations);
  d["states"] = stack_rows(tr.states);
  d["controls"] = stack_rows(tr.controls);
  d["retained_indices"] = tr.retained_indices;
  return d;
}

const IrregularSet& split_of(const Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw ConfigError("unknown split: " + name);
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["interp_mae"] = m.interp_mae;
  d["interp_mse"] = m.interp_mse;
  d["extrap_mae"] = m.extrap_mae;
  d["extrap_mse"] = m.extrap_mse;
  return d;
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Physics-enhanced deep state-space models";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<NumericError>(m, "NumericError", error);

  m.def("default_config", [](const std::string& system) { return to_ini(default_config(system)); },
        py::arg("system") = "pendulum", "Canonical INI text of a system preset.");
  m.def("canonical_config", [](const std::string& ini) { return to_ini(parse_config(ini)); },
        py::arg("ini"), "Parses INI text and returns its canonical form.");
  m.def("config_hash", [](const std::string& ini) { return config_hash(parse_config(ini)); },
        py::arg("ini"));

  m.def("init_hippo", &init_hippo, py::arg("n"));
  m.def(
      "discretize_bilinear",
      [](const Matrix& A, const Matrix& B, double delta) {
        const Discretized d = discretize_bilinear(A, B, delta);
        return py::make_tuple(d.A_bar, d.B_bar);
      },
      py::arg("A"), py::arg("B"), py::arg("delta"));

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "from_config", [](const std::string& ini) { return dataset_for(parse_config(ini)); },
          py::arg("ini"))
      .def_static("load", &read_dataset, py::arg("path"))
      .def("save", &write_dataset, py::arg("path"), py::arg("overwrite") = false)
      .def_property_readonly("obs_dim", &Dataset::obs_dim)
      .def_property_readonly("control_dim", &Dataset::control_dim)
      .def_property_readonly("system", [](const Dataset& d) { return d.config.system; })
      .def_property_readonly("dt", [](const Dataset& d) { return d.config.dt; })
      .def("__len__", [](const Dataset& d) { return d.train.trajectories.size(); })
      .def(
          "split",
          [](const Dataset& d, const std::string& name) {
            py::list out;
            for (const auto& tr : split_of(d, name).trajectories) out.append(trajectory_dict(tr));
            return out;
          },
          py::arg("name"));

  py::class_<PhySSMModel>(m, "Model")
      .def(py::init([](const std::string& ini, int obs_dim, std::uint64_t seed) {
             ModelConfig mc = parse_config(ini).model;
             mc.obs_dim = obs_dim;
             return PhySSMModel(mc, seed);
           }),
           py::arg("ini"), py::arg("obs_dim"), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def(
          "save",
          [](const PhySSMModel& model, const std::filesystem::path& p) { save_checkpoint(model, p, {}); },
          py::arg("path"))
      .def_property_readonly("latent_dim", &PhySSMModel::latent_dim)
      .def_property_readonly("parameter_count",
                             [](const PhySSMModel& model) { return model.params().scalar_count(); })
      .def(
          "predict",
          [](const PhySSMModel& model, const std::vector<double>& times, const Matrix& observations,
             const Matrix& controls, double dt, std::size_t window, std::size_t horizon) {
            Trajectory tr;
            tr.times = times;
            tr.observations = split_rows(observations);
            tr.controls = controls.size() == 0 ? std::vector<Vector>(times.size(), Vector())
                                               : split_rows(controls);
            tr.states = tr.observations;
            const FullForward f = forward_full(model, tr, dt, window, horizon);
            py::dict d;
            d["recon"] = stack_rows(f.recon);
            d["extrap"] = stack_rows(f.extrap);
            d["posterior_mean"] = stack_rows(f.posterior.means);
            d["posterior_std"] = stack_rows(f.posterior.stds);
            d["prior_mean"] = stack_rows(f.prior.means);
            d["prior_std"] = stack_rows(f.prior.stds);
            return d;
          },
          py::arg("times"), py::arg("observations"), py::arg("controls") = Matrix(0, 0),
          py::arg("dt"), py::arg("window"), py::arg("horizon") = 0,
          "Interpolates the first `window` steps and extrapolates `horizon` more.");

  m.def(
      "train",
      [](const std::string& ini, const Dataset& data, std::uint64_t seed) {
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(parse_config(ini), data, seed);
        }();
        py::list history;
        for (const auto& e : r.history) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["total"] = e.loss.total;
          d["recon"] = e.loss.recon;
          d["kl"] = e.loss.kl;
          d["reg"] = e.loss.reg;
          d["val_extrap_mse"] = e.val_extrap_mse;
          history.append(d);
        }
        return py::make_tuple(std::move(r.model), history, r.best_epoch);
      },
      py::arg("ini"), py::arg("dataset"), py::arg("seed") = 0,
      "Returns (model, history, best_epoch).");

  m.def(
      "evaluate",
      [](const PhySSMModel& model, const Dataset& data, const std::string& split, std::size_t window,
         std::size_t horizon) {
        return metrics_dict(evaluate_model(model, split_of(data, split), data.config.dt, window, horizon));
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test", py::arg("window") = 160,
      py::arg("horizon") = 80);

  m.def(
      "uniqueness_recovery",
      [](std::uint64_t seed, int iterations) {
        UniquenessOptions o;
        o.iterations = iterations;
        UniquenessReport r;
        {
          py::gil_scoped_release release;
          r = uniqueness_recovery_test(seed, o);
        }
        return json_to_py(uniqueness_to_json(r));
      },
      py::arg("seed") = 0, py::arg("iterations") = UniquenessOptions{}.iterations);
}
