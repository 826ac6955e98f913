#include "cbx/bandits.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "cbx/errors.hpp"
#include "cbx/parallel.hpp"
#include "cbx/policy_tree.hpp"

namespace cbx {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Uniform: return "Uniform";
    case Algorithm::TreeBagging: return "TreeBagging";
    case Algorithm::BootstrapThompson: return "BootstrapThompson";
    case Algorithm::BootstrapES: return "BootstrapES";
    case Algorithm::BootstrapTTTS: return "BootstrapTTTS";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  for (Algorithm a : {Algorithm::Uniform, Algorithm::TreeBagging, Algorithm::BootstrapThompson,
                      Algorithm::BootstrapES, Algorithm::BootstrapTTTS})
    if (to_string(a) == s) return a;
  throw ValidationError("unknown algorithm '" + s + "'");
}

void BanditConfig::validate() const {
  if (ensemble_size < 1) throw ValidationError("ensemble_size must be >= 1");
  if (bootstrap_fits < 1) throw ValidationError("bootstrap_fits must be >= 1");
  if (posterior_draws < 1) throw ValidationError("posterior_draws must be >= 1");
  if (!(floor_exponent > 0.0)) throw ValidationError("floor_exponent must be positive");
  if (ensemble_depth < 0 || ensemble_depth > 3) throw ValidationError("ensemble_depth must be in 0..3");
  if (max_thresholds < 2) throw ValidationError("max_thresholds must be >= 2");
  if (crossfit_subset < 1) throw ValidationError("crossfit_subset must be >= 1");
  if (!(top_two_beta >= 0.0 && top_two_beta <= 1.0)) throw ValidationError("top_two_beta must be in [0, 1]");
  if (!(min_propensity >= 0.0 && min_propensity < 1.0)) throw ValidationError("min_propensity must be in [0, 1)");
  if (lasso_folds < 2) throw ValidationError("lasso_folds must be >= 2");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
}

nlohmann::json bandit_config_to_json(const BanditConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"ensemble_size", c.ensemble_size},
          {"floor_exponent", c.floor_exponent},
          {"ensemble_depth", c.ensemble_depth},
          {"max_thresholds", c.max_thresholds},
          {"crossfit_subset", c.crossfit_subset},
          {"bootstrap_fits", c.bootstrap_fits},
          {"posterior_draws", c.posterior_draws},
          {"top_two_beta", c.top_two_beta},
          {"min_propensity", c.min_propensity},
          {"lasso_folds", c.lasso_folds},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

BanditConfig bandit_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("bandit config must be a JSON object");
  BanditConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "algorithm") c.algorithm = algorithm_from_string(v.get<std::string>());
      else if (k == "ensemble_size") c.ensemble_size = v.get<int>();
      else if (k == "floor_exponent") c.floor_exponent = v.get<double>();
      else if (k == "ensemble_depth") c.ensemble_depth = v.get<int>();
      else if (k == "max_thresholds") c.max_thresholds = v.get<int>();
      else if (k == "crossfit_subset") c.crossfit_subset = v.get<int>();
      else if (k == "bootstrap_fits") c.bootstrap_fits = v.get<int>();
      else if (k == "posterior_draws") c.posterior_draws = v.get<int>();
      else if (k == "top_two_beta") c.top_two_beta = v.get<double>();
      else if (k == "min_propensity") c.min_propensity = v.get<double>();
      else if (k == "lasso_folds") c.lasso_folds = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "threads") c.threads = v.get<int>();
      else throw ValidationError("unknown bandit config key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bandit config key '" + k + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

Eigen::MatrixXd uniform_assign(Eigen::Index rows, int num_arms) {
  if (num_arms < 1) throw std::invalid_argument("uniform_assign: no arms");
  return Eigen::MatrixXd::Constant(rows, num_arms, 1.0 / num_arms);
}

std::vector<TreePolicy> fit_bagging_ensemble(const ObservationLog& history, const BanditConfig& config, int batch) {
  if (history.empty()) return {};
  const int K = history.arms().size();
  const Eigen::MatrixXd X = history.contexts();
  const auto arms = history.arm_column();
  const Eigen::VectorXd y = history.outcomes();
  const CrossFitMuHat mu = fit_crossfit_mu(X, arms, y, K, {.subset_size = config.crossfit_subset, .ridge_lambda = {}});
  std::vector<ArmIndex> all(static_cast<std::size_t>(K));
  for (int w = 0; w < K; ++w) all[static_cast<std::size_t>(w)] = w;
  const AipwScoreTable table = aipw_scores(arms, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                                           mu.predictions(), history.propensities(), all);

  const Eigen::Index n = X.rows();
  std::vector<TreePolicy> ensemble(static_cast<std::size_t>(config.ensemble_size));
  parallel_for(ensemble.size(), config.threads, [&](std::size_t s) {
    Rng rng = make_rng(config.seed, Purpose::Ensemble, {static_cast<std::uint64_t>(batch), s});
    Eigen::MatrixXd bx(n, X.cols());
    Eigen::MatrixXd bs(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
      bx.row(i) = X.row(r);
      bs.row(i) = table.scores.row(r);
    }
    TreeSearchOptions opt{.depth = config.ensemble_depth, .max_thresholds = config.max_thresholds, .threads = 1};
    ensemble[s] = solve_tree(bs, bx, opt).policy;
  });
  return ensemble;
}

Eigen::MatrixXd ensemble_votes(const std::vector<TreePolicy>& ensemble, const Eigen::MatrixXd& contexts, int num_arms) {
  Eigen::MatrixXd votes = Eigen::MatrixXd::Zero(contexts.rows(), num_arms);
  if (ensemble.empty()) return votes;
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
    const auto x = row_span(contexts, i, scratch);
    for (const auto& tree : ensemble) votes(i, tree.predict(x)) += 1.0;
  }
  return votes / static_cast<double>(ensemble.size());
}

Eigen::MatrixXd treebagging_assign(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                   const BanditConfig& config, int batch, std::vector<TreePolicy>* ensemble_out) {
  const int K = history.arms().size();
  if (history.empty()) {
    if (ensemble_out) ensemble_out->clear();
    return uniform_assign(contexts.rows(), K);
  }
  std::vector<TreePolicy> ensemble = fit_bagging_ensemble(history, config, batch);
  const Eigen::MatrixXd votes = ensemble_votes(ensemble, contexts, K);
  const double f = floor_schedule(static_cast<std::int64_t>(history.size()) + 1, config.floor_exponent, K);
  Eigen::MatrixXd e(contexts.rows(), K);
  std::vector<double> raw(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
    for (int w = 0; w < K; ++w) raw[static_cast<std::size_t>(w)] = votes(i, w);
    const auto floored = apply_probability_floor(raw, f);
    for (int w = 0; w < K; ++w) e(i, w) = floored[static_cast<std::size_t>(w)];
  }
  if (ensemble_out) *ensemble_out = std::move(ensemble);
  return e;
}

void BootstrapLinearModel::moments(std::span<const double> x, Eigen::VectorXd& mean, Eigen::VectorXd& var) const {
  const Eigen::Index p = offset.size();
  Eigen::VectorXd xs(p);
  for (Eigen::Index j = 0; j < p; ++j) xs(j) = (x[static_cast<std::size_t>(j)] - offset(j)) / span(j);
  mean.resize(num_arms);
  var.resize(num_arms);
  for (int w = 0; w < num_arms; ++w) {
    const auto& fw = fits[static_cast<std::size_t>(w)];
    if (fw.empty()) {
      mean(w) = 0.0;
      var(w) = 1.0;
      continue;
    }
    double s = 0.0, ss = 0.0;
    for (const auto& f : fw) {
      const double v = f.predict(xs);
      s += v;
      ss += v * v;
    }
    const double m = s / static_cast<double>(fw.size());
    mean(w) = m;
    var(w) = std::max(ss / static_cast<double>(fw.size()) - m * m, 0.0);
  }
}

BootstrapLinearModel fit_bootstrap_linear(const ObservationLog& history, const BanditConfig& config, int batch) {
  const auto& schema = history.schema();
  const int K = history.arms().size();
  const auto p = static_cast<Eigen::Index>(schema.size());
  BootstrapLinearModel model;
  model.num_arms = K;
  model.offset.resize(p);
  model.span.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& f = schema.feature(static_cast<std::size_t>(j));
    model.offset(j) = f.lo;
    model.span(j) = f.hi > f.lo ? f.hi - f.lo : 1.0;
  }
  model.fits.assign(static_cast<std::size_t>(K), {});
  model.lambdas.assign(static_cast<std::size_t>(K), 0.0);
  if (history.empty()) return model;

  const Eigen::Index n = static_cast<Eigen::Index>(history.size());
  Eigen::MatrixXd X = history.contexts();
  for (Eigen::Index j = 0; j < p; ++j) X.col(j) = (X.col(j).array() - model.offset(j)) / model.span(j);
  const auto arms = history.arm_column();
  const Eigen::VectorXd y = history.outcomes();

  // Per-arm row lists and the cross-validated penalty on the original data.
  std::vector<std::vector<Eigen::Index>> rows_of(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < n; ++i) rows_of[static_cast<std::size_t>(arms[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<Eigen::MatrixXd> Xa(static_cast<std::size_t>(K));
  std::vector<Eigen::VectorXd> ya(static_cast<std::size_t>(K));
  for (int w = 0; w < K; ++w) {
    const auto& r = rows_of[static_cast<std::size_t>(w)];
    Xa[static_cast<std::size_t>(w)].resize(static_cast<Eigen::Index>(r.size()), p);
    ya[static_cast<std::size_t>(w)].resize(static_cast<Eigen::Index>(r.size()));
    for (std::size_t k = 0; k < r.size(); ++k) {
      Xa[static_cast<std::size_t>(w)].row(static_cast<Eigen::Index>(k)) = X.row(r[k]);
      ya[static_cast<std::size_t>(w)](static_cast<Eigen::Index>(k)) = y(r[k]);
    }
  }
  parallel_for(static_cast<std::size_t>(K), config.threads, [&](std::size_t w) {
    const auto nw = Xa[w].rows();
    if (nw >= config.lasso_folds) {
      model.lambdas[w] = select_lasso_lambda_cv(Xa[w], ya[w], config.lasso_folds);
    } else if (nw > 0) {
      model.lambdas[w] = lasso_lambda_max(Xa[w], ya[w], true) / 10.0;
    }
  });

  // Bootstrap multiplicities per sample, drawn row by row from one stream
  // per sample so the fits can run in any order.
  const auto M = static_cast<std::size_t>(config.bootstrap_fits);
  std::vector<std::vector<std::vector<LinearFit>>> per_sample(M);
  parallel_for(M, config.threads, [&](std::size_t m) {
    Rng rng = make_rng(config.seed, Purpose::Bootstrap, {static_cast<std::uint64_t>(batch), m});
    Eigen::VectorXd count = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) count(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)))) += 1.0;
    per_sample[m].assign(static_cast<std::size_t>(K), {});
    for (int w = 0; w < K; ++w) {
      const auto& r = rows_of[static_cast<std::size_t>(w)];
      Eigen::VectorXd c(static_cast<Eigen::Index>(r.size()));
      for (std::size_t k = 0; k < r.size(); ++k) c(static_cast<Eigen::Index>(k)) = count(r[k]);
      const double nw = c.sum();
      if (nw <= 0.0) continue;
      const auto& A = Xa[static_cast<std::size_t>(w)];
      const auto& b = ya[static_cast<std::size_t>(w)];
      GramStats g(static_cast<int>(p));
      g.n = nw;
      g.sum_x = A.transpose() * c;
      const Eigen::MatrixXd cA = c.asDiagonal() * A;
      g.xtx = A.transpose() * cA;
      const Eigen::VectorXd cb = c.cwiseProduct(b);
      g.sum_y = cb.sum();
      g.xty = A.transpose() * cb;
      g.yty = cb.dot(b);
      per_sample[m][static_cast<std::size_t>(w)].push_back(
          fit_lasso_gram(g, model.lambdas[static_cast<std::size_t>(w)], LassoOptions{.tolerance = 1e-10}));
    }
  });
  for (std::size_t m = 0; m < M; ++m)
    for (int w = 0; w < K; ++w)
      for (auto& f : per_sample[m][static_cast<std::size_t>(w)]) model.fits[static_cast<std::size_t>(w)].push_back(std::move(f));
  return model;
}

ThompsonTally thompson_tally(const Eigen::VectorXd& mean, const Eigen::VectorXd& var, int draws, Rng& rng) {
  const Eigen::Index K = mean.size();
  ThompsonTally t{Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K)};
  std::normal_distribution<double> normal;
  Eigen::VectorXd sd = var.cwiseMax(0.0).cwiseSqrt();
  for (int i = 0; i < draws; ++i) {
    Eigen::Index first = -1, second = -1;
    double v1 = -std::numeric_limits<double>::infinity(), v2 = v1;
    for (Eigen::Index w = 0; w < K; ++w) {
      const double v = mean(w) + (sd(w) > 0.0 ? sd(w) * normal(rng) : 0.0);
      if (first < 0 || v > v1) {
        second = first;
        v2 = v1;
        first = w;
        v1 = v;
      } else if (second < 0 || v > v2) {
        second = w;
        v2 = v;
      }
    }
    t.best(first) += 1.0;
    if (second >= 0) t.runner_up(second) += 1.0;
  }
  t.best /= draws;
  t.runner_up /= draws;
  return t;
}

Eigen::VectorXd exploration_sampling_weights(const Eigen::VectorXd& p) {
  if ((p.array() >= 1.0).any()) return p;
  Eigen::VectorXd w = p.array() * (1.0 - p.array());
  const double s = w.sum();
  if (!(s > 0.0)) return p;
  return w / s;
}

Eigen::VectorXd top_two_weights(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double beta) {
  return beta * p + (1.0 - beta) * q;
}

namespace {

std::uint64_t context_key(std::span<const double> x) {
  std::uint64_t h = 0x51ed270b27a1f1a5ULL;
  for (double v : x) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v));
  return h;
}

}  // namespace

Eigen::MatrixXd bootstrap_family_assign(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                        const BanditConfig& config, int batch) {
  const int K = history.arms().size();
  const BootstrapLinearModel model = fit_bootstrap_linear(history, config, batch);

  std::map<std::vector<double>, Eigen::Index> first_row;
  std::vector<Eigen::Index> unique_rows;
  std::vector<Eigen::Index> source(static_cast<std::size_t>(contexts.rows()));
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
    const auto x = row_span(contexts, i, scratch);
    auto [it, inserted] = first_row.emplace(std::vector<double>(x.begin(), x.end()), i);
    if (inserted) unique_rows.push_back(i);
    source[static_cast<std::size_t>(i)] = it->second;
  }

  Eigen::MatrixXd e(contexts.rows(), K);
  parallel_for(unique_rows.size(), config.threads, [&](std::size_t u) {
    const Eigen::Index i = unique_rows[u];
    std::vector<double> x(static_cast<std::size_t>(contexts.cols()));
    for (Eigen::Index j = 0; j < contexts.cols(); ++j) x[static_cast<std::size_t>(j)] = contexts(i, j);
    Eigen::VectorXd mean, var;
    model.moments(x, mean, var);
    Rng rng = make_rng(config.seed, Purpose::PosteriorDraws, {static_cast<std::uint64_t>(batch), context_key(x)});
    const ThompsonTally tally = thompson_tally(mean, var, config.posterior_draws, rng);
    Eigen::VectorXd raw;
    switch (config.algorithm) {
      case Algorithm::BootstrapES: raw = exploration_sampling_weights(tally.best); break;
      case Algorithm::BootstrapTTTS: raw = top_two_weights(tally.best, tally.runner_up, config.top_two_beta); break;
      default: raw = tally.best; break;
    }
    raw /= raw.sum();
    const auto floored = apply_probability_floor(std::span<const double>(raw.data(), static_cast<std::size_t>(K)),
                                                 config.min_propensity);
    for (int w = 0; w < K; ++w) e(i, w) = floored[static_cast<std::size_t>(w)];
  });
  for (Eigen::Index i = 0; i < contexts.rows(); ++i)
    if (source[static_cast<std::size_t>(i)] != i) e.row(i) = e.row(source[static_cast<std::size_t>(i)]);
  return e;
}

Eigen::MatrixXd propose_propensities(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                     const BanditConfig& config, int batch, std::vector<TreePolicy>* ensemble_out) {
  if (ensemble_out) ensemble_out->clear();
  const int K = history.arms().size();
  if (K < 2) throw ValidationError("an experiment needs at least two arms");
  switch (config.algorithm) {
    case Algorithm::Uniform: return uniform_assign(contexts.rows(), K);
    case Algorithm::TreeBagging: return treebagging_assign(history, contexts, config, batch, ensemble_out);
    default:
      if (history.empty()) return uniform_assign(contexts.rows(), K);
      return bootstrap_family_assign(history, contexts, config, batch);
  }
}

ArmIndex sample_arm(std::span<const double> probabilities, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  for (std::size_t w = 0; w < probabilities.size(); ++w) {
    cum += probabilities[w];
    if (u < cum) return static_cast<ArmIndex>(w);
  }
  for (std::size_t w = probabilities.size(); w-- > 0;)
    if (probabilities[w] > 0.0) return static_cast<ArmIndex>(w);
  return 0;
}

std::vector<ArmIndex> sample_arms(const Eigen::MatrixXd& propensities, Rng& rng) {
  std::vector<ArmIndex> out(static_cast<std::size_t>(propensities.rows()));
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < propensities.rows(); ++i) out[static_cast<std::size_t>(i)] = sample_arm(row_span(propensities, i, scratch), rng);
  return out;
}

}  // namespace cbx
