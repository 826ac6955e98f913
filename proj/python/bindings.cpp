#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cbx/bandits.hpp"
#include "cbx/errors.hpp"
#include "cbx/evaluation.hpp"
#include "cbx/log_io.hpp"
#include "cbx/pipeline.hpp"
#include "cbx/policy_tree.hpp"
#include "cbx/sim.hpp"
#include "cbx/survey.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace cbx;

namespace {

json parse(const std::string& s) { return s.empty() ? json::object() : json::parse(s); }

ExperimentConfig experiment(const std::string& config) {
  const json j = parse(config);
  return experiment_config_from_json(j.contains("experiment") ? j["experiment"] : j);
}

std::string learn_policy(const ObservationLog& log, const std::string& config) {
  const ExperimentConfig exp = experiment(config);
  BanditConfig bandit = exp.bandit;
  bandit.seed = exp.seed;
  const ObservationLog learning = log.learning_rows() ? log.learning_phase() : log;
  const auto r = run_learning_pipeline(learning, last_batch_ensemble(learning, bandit), exp.pipeline);
  return pipeline_report(r, log.schema(), log.arms(), exp.pipeline).dump();
}

std::string evaluate(const ObservationLog& log, const std::string& report) {
  const ObservationLog eval = log.learning_rows() ? log.evaluation_phase() : log;
  const PolicyReport pr = policy_report_from_json(json::parse(report), log.schema(), log.arms());
  const ValueEstimate vc = estimate_policy_value(eval, pr.contextual);
  const ValueEstimate vf = estimate_policy_value(eval, pr.fixed.as_tree());
  const DifferenceTest d = test_value_difference(eval, pr.contextual, pr.fixed.as_tree());
  json out{{"contextual", {{"estimate", vc.estimate}, {"se", vc.se}}},
           {"fixed", {{"arm", log.arms().alias(pr.fixed.arm)}, {"estimate", vf.estimate}, {"se", vf.se}}},
           {"difference", {{"diff", d.diff}, {"se", d.se}, {"p_value", d.p_value}, {"n", d.n}}}};
  return out.dump();
}

Eigen::MatrixXd propose(const ObservationLog& history, const Eigen::MatrixXd& contexts, const std::string& config,
                        int batch) {
  const json j = parse(config);
  BanditConfig b = bandit_config_from_json(j);
  return propose_propensities(history, contexts, b, batch);
}

std::string study(const std::string& config, int replicates, std::size_t corpus_rows) {
  const json j = parse(config);
  const ExperimentConfig exp = experiment_config_from_json(j.value("experiment", json::object()));
  StudySpec spec;
  spec.replicates = replicates;
  if (j.contains("algorithms")) {
    spec.algorithms.clear();
    for (const auto& a : j["algorithms"]) spec.algorithms.push_back(algorithm_from_string(a.get<std::string>()));
  }
  if (j.contains("lambdas")) spec.lambdas = j["lambdas"].get<std::vector<double>>();
  const ObservationLog corpus = generate_corpus(corpus_rows, exp.seed);
  const auto r = run_study([&](double l, std::uint64_t rep) { return build_dgp(corpus, {l}, exp.seed, rep); }, exp, spec);
  return study_summary_csv(r);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Batched contextual-bandit experiments";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<ObservationLog>(m, "ObservationLog")
      .def("__len__", &ObservationLog::size)
      .def_property_readonly("arms", [](const ObservationLog& l) { return l.arms().aliases(); })
      .def_property_readonly("features", [](const ObservationLog& l) {
        std::vector<std::string> names;
        for (const auto& f : l.schema().features()) names.push_back(f.name);
        return names;
      })
      .def_property_readonly("learning_rows", &ObservationLog::learning_rows)
      .def("contexts", &ObservationLog::contexts)
      .def("outcomes", &ObservationLog::outcomes)
      .def("propensities", &ObservationLog::propensities)
      .def("arm_indices", &ObservationLog::arm_column)
      .def("prefix", &ObservationLog::prefix)
      .def("to_csv", [](const ObservationLog& l) { return log_to_csv(l); })
      .def("sidecar", [](const ObservationLog& l) { return log_sidecar(l).dump(); });

  m.def("generate_corpus", [](std::size_t rows, std::uint64_t seed) { return generate_corpus(rows, seed); },
        py::arg("rows"), py::arg("seed") = 0);
  m.def("read_log", [](const std::string& path) { return read_log(path); });
  m.def("write_log", [](const ObservationLog& log, const std::string& path) { write_log(log, path); });
  m.def("ingest_survey_csv", [](const std::string& text) { return ingest_survey_csv(text); });

  m.def("apply_probability_floor",
        [](const std::vector<double>& raw, double floor) { return apply_probability_floor(raw, floor); });
  m.def("floor_schedule", &floor_schedule, py::arg("t"), py::arg("alpha"), py::arg("num_arms"));
  m.def("solve_tree",
        [](const Eigen::MatrixXd& scores, const Eigen::MatrixXd& contexts, int depth) {
          TreeSearchOptions o;
          o.depth = depth;
          const TreeSolution s = solve_tree(scores, contexts, o);
          return py::make_tuple(s.objective, s.policy.depth());
        },
        py::arg("scores"), py::arg("contexts"), py::arg("depth") = 1);
  m.def("propose_propensities", &propose, py::arg("history"), py::arg("contexts"), py::arg("bandit_config") = "",
        py::arg("batch") = 0);
  m.def("evaluation_mixture_propensity",
        [](int contextual_arm, int fixed_arm, double epsilon, int num_arms) {
          return evaluation_mixture_propensity({}, TreePolicy::constant(contextual_arm), FixedPolicy{fixed_arm}, epsilon,
                                               num_arms);
        });
  m.def("learn_policy", &learn_policy, py::arg("log"), py::arg("config") = "");
  m.def("evaluate", &evaluate, py::arg("log"), py::arg("report"));
  m.def("run_study", &study, py::arg("config") = "", py::arg("replicates") = 2, py::arg("corpus_rows") = 3000);
}
