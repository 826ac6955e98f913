#include "cbx/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

#include "cbx/csv.hpp"
#include "cbx/errors.hpp"
#include "cbx/evaluation.hpp"
#include "cbx/parallel.hpp"

namespace cbx {

namespace {

std::vector<ArmIndex> argmax_rows(const Eigen::MatrixXd& m) {
  std::vector<ArmIndex> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index w = 1; w < m.cols(); ++w)
      if (m(i, w) > m(i, best)) best = w;
    out[static_cast<std::size_t>(i)] = static_cast<ArmIndex>(best);
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ArmIndex arm_from_uniform(const Eigen::MatrixXd& e, Eigen::Index row, double u) {
  double cum = 0.0;
  for (Eigen::Index w = 0; w < e.cols(); ++w) {
    cum += e(row, w);
    if (u < cum) return static_cast<ArmIndex>(w);
  }
  for (Eigen::Index w = e.cols() - 1; w >= 0; --w)
    if (e(row, w) > 0.0) return static_cast<ArmIndex>(w);
  return 0;
}

}  // namespace

SimEnvironment::SimEnvironment(ContextSchema schema, ArmSet arms, Eigen::MatrixXd contexts, Eigen::MatrixXd means,
                               double noise_sd)
    : schema_(std::move(schema)), arms_(std::move(arms)), contexts_(std::move(contexts)), means_(std::move(means)),
      noise_sd_(noise_sd) {
  if (means_.rows() != contexts_.rows() || means_.cols() != arms_.size())
    throw std::invalid_argument("SimEnvironment: means must be pool x K");
  optimal_ = argmax_rows(means_);
}

SimEnvironment::SimEnvironment(ContextSchema schema, ArmSet arms, Eigen::MatrixXd contexts,
                               std::vector<Eigen::MatrixXd> level_probs, int lowest_level_value)
    : schema_(std::move(schema)), arms_(std::move(arms)), contexts_(std::move(contexts)),
      lowest_level_value_(lowest_level_value) {
  if (level_probs.empty()) throw std::invalid_argument("SimEnvironment: no levels");
  means_ = Eigen::MatrixXd::Zero(contexts_.rows(), arms_.size());
  Eigen::MatrixXd cum = Eigen::MatrixXd::Zero(contexts_.rows(), arms_.size());
  for (std::size_t l = 0; l < level_probs.size(); ++l) {
    const auto& p = level_probs[l];
    if (p.rows() != contexts_.rows() || p.cols() != arms_.size())
      throw std::invalid_argument("SimEnvironment: level probabilities must be pool x K");
    means_ += p * static_cast<double>(lowest_level_value + static_cast<int>(l));
    cum += p;
    cumulative_.push_back(cum);
  }
  optimal_ = argmax_rows(means_);
}

double SimEnvironment::outcome(std::size_t row, ArmIndex w, double u) const {
  const auto r = static_cast<Eigen::Index>(row);
  if (cumulative_.empty()) {
    const double v = std::clamp(2.0 * u - 1.0, -1.0 + 1e-16, 1.0 - 1e-16);
    return means_(r, w) + noise_sd_ * std::sqrt(2.0) * boost::math::erf_inv(v);
  }
  for (std::size_t l = 0; l < cumulative_.size(); ++l)
    if (u < cumulative_[l](r, w)) return lowest_level_value_ + static_cast<int>(l);
  // u above a cumulative total that rounded below one
  for (std::size_t l = cumulative_.size(); l-- > 0;) {
    const double below = l == 0 ? 0.0 : cumulative_[l - 1](r, w);
    if (cumulative_[l](r, w) > below) return lowest_level_value_ + static_cast<int>(l);
  }
  return lowest_level_value_;
}

SimEnvironment environment_from_model(const OrdinalModel& model, const ContextSchema& schema, const ArmSet& arms,
                                      const Eigen::MatrixXd& pool) {
  const int K = arms.size();
  const int L = model.num_levels();
  std::vector<Eigen::MatrixXd> probs(static_cast<std::size_t>(L), Eigen::MatrixXd(pool.rows(), K));
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < pool.rows(); ++i) {
    const auto x = row_span(pool, i, scratch);
    for (int w = 0; w < K; ++w) {
      const Eigen::VectorXd p = model.level_probabilities(x, w);
      for (int l = 0; l < L; ++l) probs[static_cast<std::size_t>(l)](i, w) = p(l);
    }
  }
  SimEnvironment env(schema, arms, pool, std::move(probs), model.lowest_level_value);
  env.metadata = {{"lambda", model.lambda}};
  return env;
}

SimEnvironment build_dgp(const ObservationLog& corpus, const std::vector<double>& lambdas, std::uint64_t seed,
                         std::uint64_t replicate, const OrdinalFitOptions& options) {
  if (lambdas.empty()) throw ValidationError("build_dgp: empty lambda set");
  const auto& schema = corpus.schema();
  const int K = corpus.arms().size();
  const auto n = corpus.size();
  const auto p = static_cast<Eigen::Index>(schema.size());
  const int lowest = static_cast<int>(std::lround(schema.outcome_lo()));
  const int L = static_cast<int>(std::lround(schema.outcome_hi())) - lowest + 1;
  if (n < static_cast<std::size_t>(2 * L)) throw ValidationError("build_dgp: corpus too small to fit");

  const Eigen::MatrixXd pool = corpus.contexts();
  const auto levels = outcome_levels(corpus.outcomes(), lowest, L);
  const auto arms = corpus.arm_column();
  Rng rng = make_rng(seed, Purpose::DgpFit, {replicate});
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), p);
  std::vector<ArmIndex> w(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = uniform_index(rng, n);
    X.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(r));
    w[i] = arms[r];
    y[i] = levels[r];
  }
  double lambda = lambdas.front();
  if (lambdas.size() > 1) {
    Rng lr = make_rng(seed, Purpose::DgpLambda, {replicate});
    lambda = lambdas[uniform_index(lr, lambdas.size())];
  }
  OrdinalFitOptions opt = options;
  opt.lowest_level_value = lowest;
  const OrdinalModel model = fit_ordinal(X, w, y, L, K, lambda, opt);
  SimEnvironment env = environment_from_model(model, schema, corpus.arms(), pool);
  env.metadata["replicate"] = replicate;
  return env;
}

int ExperimentConfig::learning_periods() const {
  return static_cast<int>(std::lround(learning_fraction * total_periods));
}

void ExperimentConfig::validate() const {
  if (total_periods < 1) throw ValidationError("total_periods must be positive");
  if (!(learning_fraction > 0.0 && learning_fraction < 1.0)) throw ValidationError("learning_fraction must be in (0, 1)");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  const int learn = learning_periods();
  if (learn < batch_size || learn % batch_size != 0)
    throw ValidationError("learning phase (" + std::to_string(learn) + " periods) must be a whole number of batches of " +
                          std::to_string(batch_size));
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must be in (0, 1]");
  if (eval_contexts < 1) throw ValidationError("eval_contexts must be positive");
  bandit.validate();
  pipeline.validate();
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"total_periods", c.total_periods},
          {"learning_fraction", c.learning_fraction},
          {"batch_size", c.batch_size},
          {"epsilon", c.epsilon},
          {"eval_contexts", c.eval_contexts},
          {"seed", c.seed},
          {"bandit", bandit_config_to_json(c.bandit)},
          {"pipeline", pipeline_config_to_json(c.pipeline)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "total_periods") c.total_periods = v.get<int>();
      else if (k == "learning_fraction") c.learning_fraction = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "epsilon") c.epsilon = v.get<double>();
      else if (k == "eval_contexts") c.eval_contexts = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "bandit") c.bandit = bandit_config_from_json(v);
      else if (k == "pipeline") c.pipeline = pipeline_config_from_json(v);
      else throw ValidationError("unknown experiment config key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("experiment config key '" + k + "': " + e.what());
    }
  }
  c.bandit.batch_size = c.batch_size;
  c.validate();
  return c;
}

std::vector<std::size_t> draw_eval_contexts(std::size_t pool_size, int count, std::uint64_t seed) {
  Rng rng = make_rng(seed, Purpose::EvalContexts);
  std::vector<std::size_t> rows(static_cast<std::size_t>(count));
  for (auto& r : rows) r = uniform_index(rng, pool_size);
  return rows;
}

SimSummary run_replicate(const SimEnvironment& env, const ExperimentConfig& config, std::uint64_t replicate,
                         const std::vector<std::size_t>& eval_rows, ObservationLog* log_out) {
  config.validate();
  const int T = config.total_periods;
  const int T_learn = config.learning_periods();
  const int B = config.batch_size;
  const auto p = static_cast<Eigen::Index>(env.schema().size());
  const int K = env.num_arms();

  std::vector<std::size_t> rows(static_cast<std::size_t>(T));
  std::vector<double> u_arm(rows.size()), u_out(rows.size());
  {
    Rng rc = make_rng(config.seed, Purpose::Contexts, {replicate});
    Rng ra = make_rng(config.seed, Purpose::Arms, {replicate});
    Rng ro = make_rng(config.seed, Purpose::Outcomes, {replicate});
    for (std::size_t t = 0; t < rows.size(); ++t) {
      rows[t] = uniform_index(rc, env.pool_size());
      u_arm[t] = uniform01(ra);
      u_out[t] = uniform01(ro);
    }
  }
  BanditConfig bandit = config.bandit;
  bandit.seed = derive_seed(config.seed, Purpose::Replicate, {replicate});
  bandit.batch_size = B;

  SimSummary s;
  s.algorithm = bandit.algorithm;
  s.replicate = replicate;
  s.lambda = env.metadata.is_object() ? env.metadata.value("lambda", 0.0) : 0.0;
  ObservationLog log(env.schema(), env.arms());
  double regret_learn = 0.0, regret_eval = 0.0;

  auto run_batch = [&](int batch, int start, int count, const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& assign) {
    Eigen::MatrixXd ctx(count, p);
    for (int i = 0; i < count; ++i) ctx.row(i) = env.contexts().row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(start + i)]));
    const Eigen::MatrixXd e = assign(ctx);
    double batch_regret = 0.0;
    for (int i = 0; i < count; ++i) {
      const auto t = static_cast<std::size_t>(start + i);
      Observation obs;
      obs.t = start + i + 1;
      obs.batch = batch;
      obs.x.resize(static_cast<std::size_t>(p));
      for (Eigen::Index j = 0; j < p; ++j) obs.x[static_cast<std::size_t>(j)] = ctx(i, j);
      obs.arm = arm_from_uniform(e, i, u_arm[t]);
      obs.y = env.outcome(rows[t], obs.arm, u_out[t]);
      obs.e.assign(static_cast<std::size_t>(K), 0.0);
      for (int w = 0; w < K; ++w) obs.e[static_cast<std::size_t>(w)] = e(i, w);
      batch_regret += env.mean(rows[t], env.optimal_arm(rows[t])) - env.mean(rows[t], obs.arm);
      log.append(std::move(obs));
    }
    s.batch_regret.push_back(batch_regret / count);
    return batch_regret;
  };

  std::vector<TreePolicy> last_ensemble;
  const int learn_batches = T_learn / B;
  for (int b = 0; b < learn_batches; ++b) {
    regret_learn += run_batch(b, b * B, B, [&](const Eigen::MatrixXd& ctx) {
      std::vector<TreePolicy> ens;
      Eigen::MatrixXd e = propose_propensities(log, ctx, bandit, b, &ens);
      if (b == learn_batches - 1) last_ensemble = std::move(ens);
      return e;
    });
  }
  log.set_learning_rows(static_cast<std::size_t>(T_learn));

  // arm pruning belongs to the bagging design; other designs learn over all arms
  std::vector<TreePolicy> ensemble;
  if (bandit.algorithm == Algorithm::TreeBagging)
    ensemble = last_ensemble.empty() ? last_batch_ensemble(log, bandit) : std::move(last_ensemble);
  PipelineConfig pc = config.pipeline;
  pc.threads = 1;
  const PipelineResult pr = run_learning_pipeline(log, ensemble, pc);

  int batch = learn_batches;
  for (int start = T_learn; start < T; start += B, ++batch) {
    const int count = std::min(B, T - start);
    regret_eval += run_batch(batch, start, count, [&](const Eigen::MatrixXd& ctx) {
      return evaluation_mixture(ctx, pr.contextual, pr.fixed, config.epsilon, K);
    });
  }

  s.regret = regret_learn / T_learn;
  s.evaluation_regret = T > T_learn ? regret_eval / (T - T_learn) : 0.0;
  s.overall_regret = (regret_learn + regret_eval) / T;
  s.depth = pr.depth.depth;
  s.selected = pr.selected;
  s.fixed_arm = pr.fixed.arm;
  double lv = 0.0, fv = 0.0, ov = 0.0;
  std::vector<double> scratch;
  for (std::size_t r : eval_rows) {
    const auto x = row_span(env.contexts(), static_cast<Eigen::Index>(r), scratch);
    lv += env.mean(r, pr.contextual.predict(x));
    fv += env.mean(r, pr.fixed.arm);
    ov += env.mean(r, env.optimal_arm(r));
  }
  const auto ne = static_cast<double>(eval_rows.size());
  s.learned_value = lv / ne;
  s.fixed_value = fv / ne;
  s.optimal_value = ov / ne;
  if (T > T_learn) {
    const ObservationLog eval = log.evaluation_phase();
    const DifferenceTest d = test_value_difference(eval, pr.contextual, pr.fixed.as_tree());
    s.estimated_diff = d.diff;
    s.diff_se = d.se;
    s.p_value = d.p_value;
  }
  if (log_out) *log_out = std::move(log);
  return s;
}

StudyResult run_study(const DgpBuilder& builder, const ExperimentConfig& base, const StudySpec& spec) {
  base.validate();
  if (spec.replicates < 1) throw ValidationError("replicates must be >= 1");
  if (spec.algorithms.empty() || spec.lambdas.empty()) throw ValidationError("study needs algorithms and lambdas");
  const auto R = static_cast<std::size_t>(spec.replicates);
  const std::size_t A = spec.algorithms.size();
  const std::size_t fits = spec.dgp_fits > 0 ? std::min<std::size_t>(static_cast<std::size_t>(spec.dgp_fits), R) : R;
  const bool shared = fits < R;

  std::vector<std::unique_ptr<SimEnvironment>> envs;
  if (shared) {
    envs.resize(spec.lambdas.size() * fits);
    parallel_for(envs.size(), spec.threads, [&](std::size_t i) {
      envs[i] = std::make_unique<SimEnvironment>(builder(spec.lambdas[i / fits], i % fits));
    });
  }

  StudyResult result;
  result.records.resize(spec.lambdas.size() * R * A);
  parallel_for(spec.lambdas.size() * R, spec.threads, [&](std::size_t unit) {
    const std::size_t li = unit / R;
    const std::size_t r = unit % R;
    std::unique_ptr<SimEnvironment> own;
    const SimEnvironment* env = nullptr;
    if (shared) {
      env = envs[li * fits + r % fits].get();
    } else {
      own = std::make_unique<SimEnvironment>(builder(spec.lambdas[li], r));
      env = own.get();
    }
    const auto eval_rows = draw_eval_contexts(env->pool_size(), base.eval_contexts, base.seed);
    for (std::size_t a = 0; a < A; ++a) {
      ExperimentConfig c = base;
      c.bandit.algorithm = spec.algorithms[a];
      SimSummary s = run_replicate(*env, c, r, eval_rows);
      s.lambda = spec.lambdas[li];
      result.records[unit * A + a] = std::move(s);
    }
  });
  return result;
}

std::vector<CellSummary> summarize(const StudyResult& r) {
  std::vector<std::pair<Algorithm, double>> keys;
  std::map<std::pair<int, double>, std::vector<const SimSummary*>> groups;
  for (const auto& s : r.records) {
    const std::pair<int, double> k{static_cast<int>(s.algorithm), s.lambda};
    if (!groups.count(k)) keys.emplace_back(s.algorithm, s.lambda);
    groups[k].push_back(&s);
  }
  // algorithm-major, lambda in first-seen order
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return static_cast<int>(a.first) < static_cast<int>(b.first);
  });
  auto mean_se = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair<double, double>{m, v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
  };
  std::vector<CellSummary> out;
  for (const auto& [alg, lambda] : keys) {
    const auto& g = groups[{static_cast<int>(alg), lambda}];
    CellSummary c{alg, lambda};
    c.n = g.size();
    std::vector<double> value, regret, pv;
    double de = 0.0, dse = 0.0, td = 0.0;
    for (const auto* s : g) {
      value.push_back(s->learned_value);
      regret.push_back(s->regret);
      pv.push_back(s->p_value);
      de += s->estimated_diff;
      dse += s->diff_se;
      td += s->learned_value - s->fixed_value;
    }
    std::tie(c.value_mean, c.value_se) = mean_se(value);
    std::tie(c.regret_mean, c.regret_se) = mean_se(regret);
    c.power = power_across_sims(pv);
    c.diff_estimate_mean = de / static_cast<double>(g.size());
    c.diff_se_mean = dse / static_cast<double>(g.size());
    c.true_diff_mean = td / static_cast<double>(g.size());
    out.push_back(c);
  }
  return out;
}

PairedComparison paired_comparison(const StudyResult& r, Algorithm a, Algorithm b, double lambda,
                                   const std::function<double(const SimSummary&)>& metric) {
  std::map<std::uint64_t, double> va, vb;
  for (const auto& s : r.records) {
    if (s.lambda != lambda) continue;
    if (s.algorithm == a) va[s.replicate] = metric(s);
    if (s.algorithm == b) vb[s.replicate] = metric(s);
  }
  std::vector<double> d;
  double sa = 0.0, sb = 0.0;
  for (const auto& [rep, x] : va) {
    auto it = vb.find(rep);
    if (it == vb.end()) continue;
    d.push_back(x - it->second);
    sa += x;
    sb += it->second;
  }
  PairedComparison c;
  c.n = d.size();
  if (d.empty()) return c;
  const double n = static_cast<double>(d.size());
  for (double x : d) c.mean_diff += x;
  c.mean_diff /= n;
  double ss = 0.0;
  for (double x : d) ss += (x - c.mean_diff) * (x - c.mean_diff);
  c.se = d.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  c.p_value = one_sided_p_value(c.mean_diff, c.se);
  c.ratio = sb != 0.0 ? sa / sb : 0.0;
  return c;
}

std::string study_tidy_csv(const StudyResult& r) {
  std::ostringstream out;
  out << "algorithm,lambda,replicate,metric,value\n";
  for (const auto& s : r.records) {
    const std::string prefix = to_string(s.algorithm) + "," + csv::format_double(s.lambda) + "," + std::to_string(s.replicate) + ",";
    auto put = [&](const std::string& metric, double v) { out << prefix << metric << ',' << csv::format_double(v) << '\n'; };
    put("learned_value", s.learned_value);
    put("fixed_value", s.fixed_value);
    put("optimal_value", s.optimal_value);
    put("regret", s.regret);
    put("evaluation_regret", s.evaluation_regret);
    put("overall_regret", s.overall_regret);
    put("estimated_diff", s.estimated_diff);
    put("diff_se", s.diff_se);
    put("p_value", s.p_value);
    put("depth", s.depth);
    put("fixed_arm", s.fixed_arm);
    for (std::size_t b = 0; b < s.batch_regret.size(); ++b) put("batch_regret_" + std::to_string(b), s.batch_regret[b]);
  }
  return out.str();
}

std::string study_table_csv(const StudyResult& r, bool value_table) {
  const auto cells = summarize(r);
  std::vector<double> lambdas;
  std::vector<Algorithm> algs;
  for (const auto& c : cells) {
    if (std::find(lambdas.begin(), lambdas.end(), c.lambda) == lambdas.end()) lambdas.push_back(c.lambda);
    if (std::find(algs.begin(), algs.end(), c.algorithm) == algs.end()) algs.push_back(c.algorithm);
  }
  auto find = [&](Algorithm a, double l) -> const CellSummary* {
    for (const auto& c : cells)
      if (c.algorithm == a && c.lambda == l) return &c;
    return nullptr;
  };
  std::ostringstream out;
  csv::Row header{"algorithm"};
  for (double l : lambdas) header.push_back("lambda=" + csv::format_double(l));
  out << csv::join(header) << '\n';
  for (Algorithm a : algs) {
    csv::Row row{to_string(a)};
    for (double l : lambdas) {
      const auto* c = find(a, l);
      if (!c) {
        row.emplace_back();
        continue;
      }
      const double m = value_table ? c->value_mean : c->regret_mean;
      const double se = value_table ? c->value_se : c->regret_se;
      row.push_back(fixed(m, 3) + " (" + fixed(se, 3) + ")");
    }
    out << csv::join(row) << '\n';
  }
  if (std::find(algs.begin(), algs.end(), Algorithm::TreeBagging) != algs.end() &&
      std::find(algs.begin(), algs.end(), Algorithm::Uniform) != algs.end()) {
    csv::Row row{value_table ? "Improvement (TreeBagging as % of Uniform)" : "Reduction (TreeBagging as % of Uniform)"};
    for (double l : lambdas) {
      const auto* tb = find(Algorithm::TreeBagging, l);
      const auto* un = find(Algorithm::Uniform, l);
      const double num = value_table ? tb->value_mean : tb->regret_mean;
      const double den = value_table ? un->value_mean : un->regret_mean;
      row.push_back(den != 0.0 ? fixed(100.0 * num / den, 2) + "%" : "");
    }
    out << csv::join(row) << '\n';
  }
  return out.str();
}

std::string study_summary_csv(const StudyResult& r) {
  std::ostringstream out;
  out << "algorithm,lambda,n,value_mean,value_se,regret_mean,regret_se,power,diff_estimate_mean,diff_se_mean,true_diff_mean\n";
  for (const auto& c : summarize(r)) {
    out << to_string(c.algorithm) << ',' << csv::format_double(c.lambda) << ',' << c.n << ','
        << csv::format_double(c.value_mean) << ',' << csv::format_double(c.value_se) << ','
        << csv::format_double(c.regret_mean) << ',' << csv::format_double(c.regret_se) << ','
        << csv::format_double(c.power) << ',' << csv::format_double(c.diff_estimate_mean) << ','
        << csv::format_double(c.diff_se_mean) << ',' << csv::format_double(c.true_diff_mean) << '\n';
  }
  return out.str();
}

std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::EvaluationFraction: return "evaluation_fraction";
    case SweepParameter::FloorExponent: return "floor_exponent";
    case SweepParameter::SelectedArms: return "selected_arms";
    case SweepParameter::TotalLength: return "total_length";
  }
  return "?";
}

SweepParameter sweep_parameter_from_string(const std::string& s) {
  for (auto p : {SweepParameter::EvaluationFraction, SweepParameter::FloorExponent, SweepParameter::SelectedArms,
                 SweepParameter::TotalLength})
    if (to_string(p) == s) return p;
  throw ValidationError("unknown sweep parameter '" + s + "'");
}

std::vector<SweepPoint> parameter_sweep(const DgpBuilder& builder, const ExperimentConfig& base, const StudySpec& spec,
                                        SweepParameter parameter, const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("sweep grid is empty");
  std::vector<SweepPoint> out;
  for (double v : grid) {
    ExperimentConfig c = base;
    switch (parameter) {
      case SweepParameter::EvaluationFraction: c.learning_fraction = 1.0 - v; break;
      case SweepParameter::FloorExponent: c.bandit.floor_exponent = v; break;
      case SweepParameter::SelectedArms: c.pipeline.top_k = static_cast<int>(std::lround(v)); break;
      case SweepParameter::TotalLength: c.total_periods = static_cast<int>(std::lround(v)); break;
    }
    out.push_back({v, summarize(run_study(builder, c, spec))});
  }
  return out;
}

std::string sweep_csv(SweepParameter parameter, const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "parameter,value,algorithm,lambda,n,value_mean,value_se,true_diff_mean,diff_estimate_mean,diff_se_mean,power,regret_mean\n";
  for (const auto& pt : points)
    for (const auto& c : pt.cells)
      out << to_string(parameter) << ',' << csv::format_double(pt.value) << ',' << to_string(c.algorithm) << ','
          << csv::format_double(c.lambda) << ',' << c.n << ',' << csv::format_double(c.value_mean) << ','
          << csv::format_double(c.value_se) << ',' << csv::format_double(c.true_diff_mean) << ','
          << csv::format_double(c.diff_estimate_mean) << ',' << csv::format_double(c.diff_se_mean) << ','
          << csv::format_double(c.power) << ',' << csv::format_double(c.regret_mean) << '\n';
  return out.str();
}

Profile profile_from_string(const std::string& s) {
  if (s == "desk") return Profile::Desk;
  if (s == "full") return Profile::Full;
  throw ValidationError("profile must be 'desk' or 'full'");
}

void apply_profile(Profile p, ExperimentConfig& config, StudySpec& spec) {
  if (p == Profile::Desk) {
    spec.replicates = 200;
    config.bandit.ensemble_size = 20;
    config.bandit.ensemble_depth = 1;
  } else {
    spec.replicates = 1000;
    config.bandit.ensemble_size = 50;
    config.bandit.ensemble_depth = 2;
  }
}

}  // namespace cbx
