#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cpopt/evaluate.hpp"
#include "cpopt/io.hpp"

namespace py = pybind11;
using namespace cpopt;

namespace {

using Vec = std::vector<double>;

ActionSpace space_from_strings(const std::vector<std::string>& dims) {
  std::vector<DimSpec> specs;
  for (const auto& d : dims) specs.push_back(dim_from_string(d));
  return ActionSpace(std::move(specs));
}

std::vector<std::string> space_to_strings(const ActionSpace& s) {
  std::vector<std::string> out;
  for (const auto& d : s.dims()) out.push_back(dim_to_string(d));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Offline contextual-bandit action optimization (C++ core)";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.attr("COUNTERFACTUAL_PROPENSITY") = kCounterfactualPropensity;
  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("index"));

  py::class_<ActionSpace>(m, "ActionSpace")
      .def(py::init(&space_from_strings), py::arg("dims"),
           "dims like ['continuous 0 1', 'discrete 0 0.5 1']")
      .def_static("default_benchmark", &ActionSpace::default_benchmark)
      .def("__len__", &ActionSpace::size)
      .def("is_discrete", &ActionSpace::is_discrete)
      .def("levels", &ActionSpace::levels)
      .def("lower", &ActionSpace::lower)
      .def("upper", &ActionSpace::upper)
      .def("dims", &space_to_strings)
      .def("validate", [](const ActionSpace& s, const Vec& a) { return validate_action(s, a).valid(); })
      .def("__eq__", [](const ActionSpace& a, const ActionSpace& b) { return a == b; })
      .def("__repr__", [](const ActionSpace& s) { return "ActionSpace(" + space_to_json(s).dump() + ")"; });

  py::class_<LoggedInteraction>(m, "LoggedInteraction")
      .def(py::init([](Vec s, Vec a, double r, double p) { return LoggedInteraction{std::move(s), std::move(a), r, p}; }),
           py::arg("context"), py::arg("action"), py::arg("reward"), py::arg("propensity"))
      .def_readwrite("context", &LoggedInteraction::context)
      .def_readwrite("action", &LoggedInteraction::action)
      .def_readwrite("reward", &LoggedInteraction::reward)
      .def_readwrite("propensity", &LoggedInteraction::propensity)
      .def("is_counterfactual", &LoggedInteraction::is_counterfactual);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<ActionSpace, std::size_t, std::vector<LoggedInteraction>>(), py::arg("space"),
           py::arg("context_dim"), py::arg("records"))
      .def("__len__", &Dataset::size)
      .def("__getitem__", [](const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error();
        return d[i];
      })
      .def_property_readonly("space", &Dataset::space)
      .def_property_readonly("context_dim", &Dataset::context_dim)
      .def("contexts", &Dataset::contexts)
      .def("rewards", &Dataset::rewards)
      .def("actions", [](const Dataset& d) {
        std::vector<Vec> out;
        for (const auto& r : d.records()) out.push_back(r.action);
        return out;
      })
      .def("propensities", [](const Dataset& d) {
        Vec out;
        for (const auto& r : d.records()) out.push_back(r.propensity);
        return out;
      })
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def_static("load", &load_dataset, py::arg("path"), py::arg("space"));

  m.def("split_dataset", &split_dataset, py::arg("dataset"), py::arg("heldout"), py::arg("seed"));
  m.def("bootstrap_sample", &bootstrap_sample, py::arg("dataset"), py::arg("seed"));

  py::class_<EnvParams>(m, "EnvParams")
      .def(py::init<>())
      .def_readwrite("context_dim", &EnvParams::context_dim)
      .def_readwrite("bumps", &EnvParams::bumps)
      .def_readwrite("length_scale", &EnvParams::length_scale)
      .def_readwrite("noise_std", &EnvParams::noise_std)
      .def_readwrite("logging_mix", &EnvParams::logging_mix)
      .def_readwrite("seed", &EnvParams::seed);

  py::class_<SyntheticEnvSpec>(m, "SyntheticEnv")
      .def(py::init(&make_synthetic_env), py::arg("params"), py::arg("space"))
      .def_readonly("context_dim", &SyntheticEnvSpec::context_dim)
      .def_readonly("space", &SyntheticEnvSpec::space)
      .def("true_reward", [](const SyntheticEnvSpec& e, const Vec& s, const Vec& a) { return true_reward(e, s, a); })
      .def("logging_density",
           [](const SyntheticEnvSpec& e, const Vec& s, const Vec& a) { return logging_density(e, s, a); })
      .def("generate", &generate_dataset, py::arg("n"), py::arg("seed"))
      .def("brute_force_optimum",
           [](const SyntheticEnvSpec& e, const Vec& s, std::size_t res) {
             const auto g = brute_force_optimum(e, s, res);
             return py::make_tuple(g.action, g.value);
           },
           py::arg("context"), py::arg("resolution") = 9);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("step_size", &TrainConfig::step_size)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("init_scale", &TrainConfig::init_scale);

  py::class_<RewardEnsemble>(m, "RewardEnsemble")
      .def("__len__", &RewardEnsemble::size)
      .def("member_predictions",
           [](const RewardEnsemble& e, const Vec& s, const Vec& a) { return e.member_predictions(s, a); })
      .def("predict",
           [](const RewardEnsemble& e, const Vec& s, const Vec& a) {
             const auto p = e.predict(s, a);
             return py::make_tuple(p.mean, p.std);
           })
      .def("penalized_objective",
           [](const RewardEnsemble& e, const Vec& s, const Vec& a, double beta) {
             const auto p = e.penalized_objective(s, a, beta);
             return py::make_tuple(p.value, p.grad_action);
           },
           py::arg("context"), py::arg("action"), py::arg("beta") = 0.0)
      .def("save", [](const RewardEnsemble& e, const std::filesystem::path& p) { save_ensemble(e, p); })
      .def_static("load", &load_ensemble);

  m.def(
      "train_ensemble",
      [](const Dataset& d, std::size_t members, const TrainConfig& cfg, std::uint64_t seed,
         std::vector<std::size_t> hidden) { return train_ensemble(d, members, cfg, seed, std::move(hidden), 1); },
      py::arg("dataset"), py::arg("members") = 10, py::arg("config") = TrainConfig{}, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<std::size_t>{64, 64}, py::call_guard<py::gil_scoped_release>());

  py::class_<AugmentConfig>(m, "AugmentConfig")
      .def(py::init<>())
      .def_readwrite("count_per_record", &AugmentConfig::count_per_record)
      .def_readwrite("min_distance", &AugmentConfig::min_distance)
      .def_readwrite("quantile", &AugmentConfig::pessimistic_quantile)
      .def_readwrite("max_attempts", &AugmentConfig::max_attempts);
  m.def("augment_counterfactual", &augment_counterfactual, py::arg("dataset"), py::arg("config"), py::arg("seed"));

  py::class_<StochasticPolicy>(m, "StochasticPolicy")
      .def(py::init<ActionSpace, std::size_t, std::vector<std::size_t>, std::uint64_t>(), py::arg("space"),
           py::arg("context_dim"), py::arg("hidden") = std::vector<std::size_t>{64, 64}, py::arg("seed") = 0)
      .def("init_from_marginals", &StochasticPolicy::init_from_marginals)
      .def("log_density", [](const StochasticPolicy& p, const Vec& s, const Vec& a) { return p.log_density(s, a); })
      .def("density", [](const StochasticPolicy& p, const Vec& s, const Vec& a) { return p.density(s, a); })
      .def("sample", [](const StochasticPolicy& p, const Vec& s, std::uint64_t seed) { return p.sample(s, seed); })
      .def("mode", [](const StochasticPolicy& p, const Vec& s) { return p.mode(s); })
      .def("to_text", [](const StochasticPolicy& p) {
        std::ostringstream os;
        write_policy(p, os);
        return os.str();
      })
      .def_static("from_text", [](const std::string& t) {
        std::istringstream is(t);
        return read_policy(is);
      });

  py::class_<OPPGConfig>(m, "OPPGConfig")
      .def(py::init<>())
      .def_readwrite("clip", &OPPGConfig::clip)
      .def_readwrite("epochs", &OPPGConfig::epochs)
      .def_readwrite("batch_size", &OPPGConfig::batch_size)
      .def_readwrite("step_size", &OPPGConfig::step_size)
      .def_readwrite("momentum", &OPPGConfig::momentum)
      .def_readwrite("seed", &OPPGConfig::seed);
  m.def("oppg_train", [](const StochasticPolicy& p, const Dataset& d, const OPPGConfig& c) { return oppg_train(p, d, c); },
        py::arg("policy"), py::arg("dataset"), py::arg("config") = OPPGConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("clip_weight", &clip_weight, py::arg("ratio"), py::arg("max_weight"));

  py::class_<GAConfig>(m, "GAConfig")
      .def(py::init<>())
      .def_readwrite("step_size", &GAConfig::step_size)
      .def_readwrite("max_iters", &GAConfig::max_iters)
      .def_readwrite("improvement_tol", &GAConfig::improvement_tol)
      .def_readwrite("restarts", &GAConfig::restarts)
      .def_readwrite("beta", &GAConfig::beta)
      .def_readwrite("seed", &GAConfig::seed)
      .def_readwrite("max_halvings", &GAConfig::max_halvings)
      .def_readwrite("refine_discrete", &GAConfig::refine_discrete)
      .def_property(
          "init_source", [](const GAConfig& c) { return to_string(c.init_source); },
          [](GAConfig& c, const std::string& s) { c.init_source = init_source_from_string(s); });

  m.def(
      "optimize_action",
      [](const RewardEnsemble& e, const Vec& s, const GAConfig& cfg, const StochasticPolicy* policy) {
        const auto r = optimize_action(e, s, cfg, policy);
        return py::make_tuple(r.action, r.predicted_value, diagnostics_to_json(r.diagnostics).dump());
      },
      py::arg("ensemble"), py::arg("context"), py::arg("config") = GAConfig{}, py::arg("policy") = nullptr,
      "returns (action, predicted value, diagnostics JSON text)");
  m.def("snap_discrete", [](const ActionSpace& s, const Vec& a) { return snap_discrete(s, a); });

  auto ips = [](const IpsEstimate& e) { return py::make_tuple(e.estimate, e.std_error); };
  m.def("ips_estimate", [ips](const StochasticPolicy& p, const Dataset& d) { return ips(ips_estimate(p, d)); },
        "returns (estimate, standard error)");
  m.def("ips_estimate",
        [ips](const std::function<double(Vec, Vec)>& f, const Dataset& d) {
          return ips(ips_estimate([&f](std::span<const double> s, std::span<const double> a) {
                                    return f(Vec(s.begin(), s.end()), Vec(a.begin(), a.end()));
                                  },
                                  d));
        });
  m.def("clipped_ips_estimate",
        [ips](const StochasticPolicy& p, const Dataset& d, double mw) { return ips(clipped_ips_estimate(p, d, mw)); },
        py::arg("policy"), py::arg("dataset"), py::arg("max_weight"));

  m.def("default_config_ini",
        [](const std::string& profile) { return run_config_to_ini(default_run_config(profile_from_string(profile))); },
        py::arg("profile") = "fast");
  m.def(
      "run_benchmark",
      [](const std::string& ini, const std::string& profile, std::optional<std::filesystem::path> out) {
        const auto cfg = parse_run_config(ini, profile_from_string(profile));
        BenchmarkResult res;
        {
          py::gil_scoped_release release;
          res = run_benchmark(cfg, out);
        }
        return res.summary(cfg).dump();
      },
      py::arg("config_ini") = "", py::arg("profile") = "fast", py::arg("out_dir") = std::nullopt,
      "runs the whole pipeline; returns summary JSON text");
}
