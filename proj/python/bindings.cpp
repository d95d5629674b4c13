#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"

#include "nbs/errors.h"
#include "nbs/gmm.h"
#include "nbs/harness.h"
#include "nbs/oracle.h"
#include "nbs/trainer.h"
#include "nbs/uai.h"

namespace py = pybind11;
using namespace nbs;

namespace {

nlohmann::json to_json(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return nlohmann::json::parse(obj.cast<std::string>());
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

PartialAssignment to_evidence(const std::map<VariableId, int>& e) { return {e.begin(), e.end()}; }

std::vector<std::vector<double>> marginals(const DiscreteModel& model, const std::map<VariableId, int>& evidence,
                                           const std::string& method) {
  if (method == "enum") return enumerate_marginals(model, to_evidence(evidence)).probs;
  if (method == "ve") return variable_elimination_marginals(model, to_evidence(evidence)).probs;
  throw ConfigError("method must be 've' or 'enum'");
}

}  // namespace

PYBIND11_MODULE(pynbs, m) {
  m.doc() = "Neural block proposals for MCMC on discrete graphical models";

  py::register_exception<Error>(m, "NbsError", PyExc_RuntimeError);

  py::class_<DiscreteModel>(m, "Model")
      .def_property_readonly("num_variables", &DiscreteModel::num_variables)
      .def_property_readonly("cardinalities",
                             [](const DiscreteModel& d) {
                               return std::vector<int>(d.cardinalities().begin(), d.cardinalities().end());
                             })
      .def_property_readonly("directed", &DiscreteModel::is_directed)
      .def("to_uai", [](const DiscreteModel& d) { return serialize_uai(d); })
      .def("log_joint", [](const DiscreteModel& d, const Assignment& a) { return log_joint(d, a).value(); });

  m.def("parse_uai", [](const std::string& text) { return parse_uai(text); }, py::arg("text"));
  m.def("read_uai", &read_uai_file, py::arg("path"));
  m.def(
      "generate_model",
      [](const py::object& spec) {
        return generate_model(GeneratorSpec::from_config(ConfigReader(to_json(spec), "<python>")));
      },
      py::arg("spec"), "Random model from a generator spec (kind, rows, cols, p_determ, seed, ...).");
  m.def("exact_marginals", &marginals, py::arg("model"), py::arg("evidence") = std::map<VariableId, int>{},
        py::arg("method") = "ve");
  m.def(
      "marginal_error",
      [](const std::vector<std::vector<double>>& est, const std::vector<std::vector<double>>& truth) {
        return marginal_error(MarginalTable{est}, MarginalTable{truth});
      },
      py::arg("estimate"), py::arg("truth"));
  m.def(
      "run_experiment",
      [](const py::object& config) {
        const ExperimentConfig c = ExperimentConfig::from_json(to_json(config), "<python>");
        EvalReport report;
        {
          py::gil_scoped_release release;
          report = run_experiment(c);
        }
        return from_json(report.to_json(true));
      },
      py::arg("config"), "Runs a sampling experiment and returns its report.");
  m.def(
      "train",
      [](const py::object& config) {
        const TrainConfig c = TrainConfig::from_json(to_json(config), "<python>");
        py::gil_scoped_release release;
        run_train(c);
      },
      py::arg("config"), "Trains a block proposal and writes params next to the report.");
  m.def(
      "eval_kl",
      [](const std::string& params_path, const std::string& motif, double p_determ, std::size_t n,
         std::uint64_t seed) {
        const MdnParams params = load_params(params_path);
        InstantiationDistribution dist;
        dist.motif = motif_by_name(motif);
        dist.cpt.p_determ = p_determ;
        dist.cpt.alpha.assign(static_cast<std::size_t>(dist.motif.b_cards.front()), 0.5);
        const KlSummary kl = evaluate_kl(params, dist, n, seed);
        py::dict out;
        out["values"] = kl.values;
        out["median"] = kl.median;
        out["mean"] = kl.mean;
        out["p90"] = kl.p90;
        return out;
      },
      py::arg("params"), py::arg("motif"), py::arg("p_determ") = 0.05, py::arg("n") = 1000,
      py::arg("seed") = 0);
  m.def("motif_names", &motif_names);
  m.def(
      "gmm_collapsed_log_likelihood",
      [](const Eigen::MatrixXd& mu, const std::vector<int>& v, const Eigen::MatrixXd& x, double sigma2_mu,
         double sigma2) {
        GmmSpec spec;
        spec.m = static_cast<int>(mu.rows());
        spec.d = static_cast<int>(mu.cols());
        spec.n = static_cast<int>(x.rows());
        spec.sigma2_mu = sigma2_mu;
        spec.sigma2 = sigma2;
        return collapsed_log_likelihood(spec, mu, v, x);
      },
      py::arg("mu"), py::arg("v"), py::arg("x"), py::arg("sigma2_mu") = 4.0, py::arg("sigma2") = 0.1);
}
