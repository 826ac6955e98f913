#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cbx/errors.hpp"
#include "cbx/evaluation.hpp"
#include "cbx/log_io.hpp"
#include "cbx/service.hpp"
#include "cbx/sim.hpp"
#include "cbx/survey.hpp"
#include "cbx/csv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cbx;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out = ".";
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool profile) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "master seed");
  if (profile) cmd->add_option("--profile", c.profile, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
}

ObservationLog load_log(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("no such file: " + path);
  if (fs::exists(sidecar_path(path))) return read_log(path);
  // no sidecar: treat it as a survey export
  return ingest_survey_csv(read_text_file(path));
}

void write_out(const fs::path& dir, const std::string& name, const std::string& text) {
  fs::create_directories(dir);
  write_text_file(dir / name, text);
  std::cout << (dir / name).string() << '\n';
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Experiment settings from a config that is either an experiment config or
// {"experiment": {...}, ...}.
ExperimentConfig experiment_from(const json& j) {
  if (j.contains("experiment")) return experiment_config_from_json(j["experiment"]);
  return experiment_config_from_json(j);
}

int cmd_simulate(const Common& c) {
  if (c.config.empty()) throw ValidationError("simulate needs --config");
  const json cfg = read_json(c.config);
  for (auto it = cfg.begin(); it != cfg.end(); ++it)
    if (it.key() != "experiment" && it.key() != "study" && it.key() != "dgp" && it.key() != "sweep")
      throw ValidationError("unknown config key '" + it.key() + "'");
  ExperimentConfig exp = experiment_config_from_json(cfg.value("experiment", json::object()));
  StudySpec spec;
  if (!c.profile.empty()) apply_profile(profile_from_string(c.profile), exp, spec);
  if (cfg.contains("study")) {
    const json& s = cfg["study"];
    for (auto it = s.begin(); it != s.end(); ++it) {
      const std::string& k = it.key();
      if (k == "algorithms") {
        spec.algorithms.clear();
        for (const auto& a : it.value()) spec.algorithms.push_back(algorithm_from_string(a.get<std::string>()));
      } else if (k == "lambdas") spec.lambdas = it.value().get<std::vector<double>>();
      else if (k == "replicates") spec.replicates = it.value().get<int>();
      else if (k == "dgp_fits") spec.dgp_fits = it.value().get<int>();
      else throw ValidationError("unknown study key '" + k + "'");
    }
  }
  if (c.seed) exp.seed = *c.seed;
  spec.threads = c.threads;
  exp.validate();

  const json dgp = cfg.value("dgp", json::object());
  ObservationLog corpus;
  if (dgp.contains("corpus")) {
    fs::path p = dgp["corpus"].get<std::string>();
    if (p.is_relative()) p = fs::path(c.config).parent_path() / p;
    corpus = load_log(p.string());
  } else {
    corpus = generate_corpus(dgp.value("synthetic_rows", std::size_t{3000}), dgp.value("corpus_seed", std::uint64_t{7}));
  }
  const std::uint64_t seed = exp.seed;
  DgpBuilder builder = [&corpus, seed](double lambda, std::uint64_t rep) { return build_dgp(corpus, {lambda}, seed, rep); };

  const fs::path out = c.out;
  json used{{"experiment", experiment_config_to_json(exp)},
            {"study", {{"lambdas", spec.lambdas}, {"replicates", spec.replicates}, {"dgp_fits", spec.dgp_fits}}}};
  used["study"]["algorithms"] = json::array();
  for (auto a : spec.algorithms) used["study"]["algorithms"].push_back(to_string(a));
  if (cfg.contains("sweep")) {
    const json& s = cfg["sweep"];
    const SweepParameter param = sweep_parameter_from_string(s.at("parameter").get<std::string>());
    const auto grid = s.at("grid").get<std::vector<double>>();
    const auto points = parameter_sweep(builder, exp, spec, param, grid);
    used["sweep"] = s;
    write_out(out, "sweep.csv", sweep_csv(param, points));
  } else {
    const StudyResult r = run_study(builder, exp, spec);
    write_out(out, "study_tidy.csv", study_tidy_csv(r));
    write_out(out, "study_summary.csv", study_summary_csv(r));
    write_out(out, "table_value.csv", study_table_csv(r, true));
    write_out(out, "table_regret.csv", study_table_csv(r, false));
  }
  write_out(out, "config_used.json", used.dump(2) + "\n");
  return 0;
}

int cmd_learn_policy(const Common& c, const std::string& log_path) {
  ObservationLog log = load_log(log_path);
  if (log.empty()) throw ValidationError("log has no rows");
  ExperimentConfig exp;
  if (!c.config.empty()) exp = experiment_from(read_json(c.config));
  if (c.seed) exp.seed = *c.seed;
  BanditConfig bandit = exp.bandit;
  bandit.seed = exp.seed;
  PipelineConfig pc = exp.pipeline;
  pc.threads = c.threads;
  const ObservationLog learning = log.learning_rows() ? log.learning_phase() : log;
  const auto ensemble = last_batch_ensemble(learning, bandit);
  const PipelineResult r = run_learning_pipeline(learning, ensemble, pc);
  const json report = pipeline_report(r, log.schema(), log.arms(), pc);
  write_out(c.out, "policy_report.json", report.dump(2) + "\n");
  write_out(c.out, "policy_tree.txt", report.at("contextual_policy_text").get<std::string>());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& log_path, const std::string& policy_path) {
  const ObservationLog log = load_log(log_path);
  const ObservationLog eval = log.learning_rows() ? log.evaluation_phase() : log;
  if (eval.empty()) throw ValidationError("no evaluation rows");
  const PolicyReport pr = policy_report_from_json(read_json(policy_path), log.schema(), log.arms());
  const TreePolicy fixed = pr.fixed.as_tree();
  const auto& arms = log.arms();

  std::ostringstream t8;
  t8 << "Policy,Est. Value,Std. Error,Est. Diff,Std. Error,p-value\n";
  const ValueEstimate vf = estimate_policy_value(eval, fixed);
  const ValueEstimate vc = estimate_policy_value(eval, pr.contextual);
  const DifferenceTest d = test_value_difference(eval, pr.contextual, fixed);
  t8 << csv::quote("Best fixed policy (" + arms.alias(pr.fixed.arm) + ")") << ',' << fmt3(vf.estimate) << ','
     << fmt3(vf.se) << ",,,\n";
  t8 << "Learned contextual policy," << fmt3(vc.estimate) << ',' << fmt3(vc.se) << ',' << fmt3(d.diff) << ','
     << fmt3(d.se) << ',' << fmt3(d.p_value) << '\n';

  std::ostringstream t9;
  t9 << "Policy,Est. Value,Std. Error\n";
  for (int w = 0; w < arms.size(); ++w) {
    const ValueEstimate v = estimate_policy_value(eval, TreePolicy::constant(w));
    t9 << csv::quote(arms.alias(w)) << ',' << fmt3(v.estimate) << ',' << fmt3(v.se) << '\n';
  }

  std::ostringstream t10;
  t10 << "Contrast,Est. Diff,Std. Error,p-value,n\n";
  const auto regions = region_partition(pr.contextual, arms.size());
  std::vector<Region> shown;
  for (ArmIndex w : pr.selected)
    if (w != pr.fixed.arm) shown.push_back(regions[static_cast<std::size_t>(w)]);
  for (const auto& rc : contrast_per_region(eval, pr.contextual, pr.fixed, shown)) {
    t10 << csv::quote(arms.alias(rc.arm) + " - " + arms.alias(pr.fixed.arm)) << ',';
    if (rc.test) t10 << fmt3(rc.test->diff) << ',' << fmt3(rc.test->se) << ',' << fmt3(rc.test->p_value);
    else t10 << ",,";
    t10 << ',' << rc.n << '\n';
  }
  write_out(c.out, "table_learned_policy.csv", t8.str());
  write_out(c.out, "table_fixed_policies.csv", t9.str());
  write_out(c.out, "table_regions.csv", t10.str());
  return 0;
}

int cmd_plot_data(const Common& c, const std::string& log_path, const std::string& policy_path) {
  const ObservationLog log = load_log(log_path);
  if (log.empty()) throw ValidationError("log has no rows");
  const PolicyReport pr = policy_report_from_json(read_json(policy_path), log.schema(), log.arms());
  ExperimentConfig exp;
  if (!c.config.empty()) exp = experiment_from(read_json(c.config));
  if (c.seed) exp.seed = *c.seed;
  BanditConfig bandit = exp.bandit;
  bandit.seed = exp.seed;
  const std::size_t learn = log.learning_rows().value_or(log.size());
  const int K = log.arms().size();
  PropensityReplay replay = [&](const ObservationLog& prefix, const Eigen::MatrixXd& ctx, int batch) -> Eigen::MatrixXd {
    if (prefix.size() < learn) return propose_propensities(prefix, ctx, bandit, batch);
    return evaluation_mixture(ctx, pr.contextual, pr.fixed, exp.epsilon, K);
  };
  const auto groups = default_subgroups(log.schema());
  const auto rows = batch_descriptives(log, pr.contextual, groups, replay);

  auto num = [](double v) { return std::isnan(v) ? std::string() : csv::format_double(v); };
  std::ostringstream all, reward;
  all << "statistic,batch,subgroup,arm,value,se,n\n";
  reward << "batch,subgroup,mean_reward,se,n\n";
  for (const auto& r : rows) {
    const std::string se = r.se ? csv::format_double(*r.se) : "";
    all << r.statistic << ',' << r.batch << ',' << r.subgroup << ',' << r.arm << ',' << num(r.value) << ',' << se << ','
        << r.n << '\n';
    if (r.statistic == "mean_reward")
      reward << r.batch << ',' << r.subgroup << ',' << num(r.value) << ',' << se << ',' << r.n << '\n';
  }
  std::ostringstream sub;
  sub << "subgroup,arm,mean,se,n\n";
  for (const auto& cell : subgroup_means(log, groups))
    sub << cell.subgroup << ',' << log.arms().alias(cell.arm) << ',' << (cell.mean ? csv::format_double(*cell.mean) : "")
        << ',' << (cell.se ? csv::format_double(*cell.se) : "") << ',' << cell.n << '\n';
  write_out(c.out, "batch_descriptives.csv", all.str());
  write_out(c.out, "reward_by_batch.csv", reward.str());
  write_out(c.out, "subgroup_means.csv", sub.str());
  return 0;
}

int cmd_ingest(const Common& c, const std::string& survey, const std::string& out_name) {
  if (!fs::exists(survey)) throw ValidationError("no such file: " + survey);
  IngestReport rep;
  ObservationLog log = ingest_survey_csv(read_text_file(survey), &rep);
  fs::create_directories(c.out);
  const fs::path dest = fs::path(c.out) / out_name;
  write_log(log, dest);
  std::cout << dest.string() << '\n'
            << "rows_read " << rep.rows_read << "\nrows_dropped_attention " << rep.dropped_attention << "\nrows_kept "
            << log.size() << '\n';
  return 0;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batched contextual-bandit experiments: simulate, learn, evaluate, serve"};
  app.require_subcommand(1);

  Common sim, learn, eval, plt, ing;
  auto* simulate = app.add_subcommand("simulate", "run a simulation study or parameter sweep");
  add_common(simulate, sim, true);

  std::string learn_log;
  auto* learn_cmd = app.add_subcommand("learn-policy", "learn tree and fixed policies from a learning log");
  learn_cmd->add_option("log", learn_log, "log CSV")->required();
  add_common(learn_cmd, learn, false);

  std::string eval_log, eval_policy;
  auto* evaluate = app.add_subcommand("evaluate", "value tables on evaluation data");
  evaluate->add_option("log", eval_log, "evaluation log CSV")->required();
  evaluate->add_option("--policy", eval_policy, "policy report JSON")->required();
  add_common(evaluate, eval, false);

  std::string plot_log, plot_policy;
  auto* plot = app.add_subcommand("plot-data", "tidy per-batch statistics for plotting");
  plot->add_option("log", plot_log, "log CSV")->required();
  plot->add_option("--policy", plot_policy, "policy report JSON")->required();
  add_common(plot, plt, false);

  std::string survey, ingest_name = "log.csv";
  auto* ingest = app.add_subcommand("ingest", "validate a survey export into a log");
  ingest->add_option("survey", survey, "survey CSV")->required();
  ingest->add_option("--name", ingest_name, "output log file name");
  add_common(ingest, ing, false);

  std::string host = env_or("CBX_HOST", "127.0.0.1");
  int port = std::atoi(env_or("CBX_PORT", "8080").c_str());
  std::string state_dir = env_or("CBX_STATE_DIR", "cbx-state");
  auto* serve_cmd = app.add_subcommand("serve", "run the assignment service");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--state-dir", state_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*learn_cmd) return cmd_learn_policy(learn, learn_log);
    if (*evaluate) return cmd_evaluate(eval, eval_log, eval_policy);
    if (*plot) return cmd_plot_data(plt, plot_log, plot_policy);
    if (*ingest) return cmd_ingest(ing, survey, ingest_name);
    if (*serve_cmd) {
      ExperimentStore store(state_dir);
      std::cerr << "listening on " << host << ':' << port << '\n';
      serve(store, host, port);
      return 0;
    }
  } catch (const RowError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
