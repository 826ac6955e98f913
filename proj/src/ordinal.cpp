#include "cbx/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cbx/errors.hpp"

namespace cbx {

namespace {

double log_sigmoid(double a) { return a >= 0.0 ? -std::log1p(std::exp(-a)) : a - std::log1p(std::exp(a)); }
double sigmoid(double a) { return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a)); }

// Per-row pieces of the proportional-odds likelihood. hi/lo are the
// cumulative-logit arguments at the observed level's upper and lower cut.
struct RowTerms {
  double log_prob = 0.0;
  double u = 0.0;  // d log P / d c_hi
  double v = 0.0;  // d log P / d c_lo
  double h_aa = 0.0, h_bb = 0.0, h_ab = 0.0;
};

RowTerms row_terms(int level, int num_levels, const Eigen::VectorXd& theta, double eta, bool second_order) {
  RowTerms r;
  const bool has_hi = level < num_levels;
  const bool has_lo = level > 1;
  const double c_hi = has_hi ? theta(level - 1) - eta : 0.0;
  const double c_lo = has_lo ? theta(level - 2) - eta : 0.0;
  if (has_hi && has_lo) {
    r.log_prob = log_sigmoid(c_hi) + log_sigmoid(-c_lo) + std::log(-std::expm1(c_lo - c_hi));
  } else if (has_hi) {
    r.log_prob = log_sigmoid(c_hi);
  } else if (has_lo) {
    r.log_prob = log_sigmoid(-c_lo);
  }
  // log f(c) = log sigma(c) + log sigma(-c)
  double fp_hi = 0.0, fp_lo = 0.0;
  if (has_hi) {
    r.u = std::exp(log_sigmoid(c_hi) + log_sigmoid(-c_hi) - r.log_prob);
    fp_hi = 1.0 - 2.0 * sigmoid(c_hi);
  }
  if (has_lo) {
    r.v = -std::exp(log_sigmoid(c_lo) + log_sigmoid(-c_lo) - r.log_prob);
    fp_lo = 1.0 - 2.0 * sigmoid(c_lo);
  }
  if (second_order) {
    // f'(c) / D = (f(c) / D) (1 - 2 sigma(c))
    if (has_hi) r.h_aa = r.u * fp_hi - r.u * r.u;
    if (has_lo) r.h_bb = r.v * fp_lo - r.v * r.v;
    r.h_ab = -r.u * r.v;
  }
  return r;
}

struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

Evaluation evaluate(const Eigen::MatrixXd& Z, std::span<const int> levels, std::span<const double> weights,
                    const Eigen::VectorXd& theta, const Eigen::VectorXd& beta, double lambda, bool with_hessian) {
  const int L = static_cast<int>(theta.size()) + 1;
  const Eigen::Index d = beta.size();
  const Eigen::Index m = theta.size();
  const Eigen::Index n = Z.rows();
  Evaluation ev;
  ev.gradient = Eigen::VectorXd::Zero(m + d);
  Eigen::VectorXd eta = Z * beta;
  Eigen::VectorXd s_beta(n);    // coefficient of z z'
  Eigen::VectorXd s_grad(n);    // coefficient of z in the beta gradient
  Eigen::MatrixXd cross;        // theta x beta block
  Eigen::MatrixXd theta_block;  // theta x theta block
  if (with_hessian) {
    cross = Eigen::MatrixXd::Zero(m, d);
    theta_block = Eigen::MatrixXd::Zero(m, m);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = levels[static_cast<std::size_t>(i)];
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    const RowTerms r = row_terms(y, L, theta, eta(i), with_hessian);
    ev.value += w * r.log_prob;
    if (y < L) ev.gradient(y - 1) += w * r.u;
    if (y > 1) ev.gradient(y - 2) += w * r.v;
    s_grad(i) = -w * (r.u + r.v);
    if (with_hessian) {
      s_beta(i) = w * (r.h_aa + 2.0 * r.h_ab + r.h_bb);
      if (y < L) {
        theta_block(y - 1, y - 1) += w * r.h_aa;
        cross.row(y - 1) -= (w * (r.h_aa + r.h_ab)) * Z.row(i);
      }
      if (y > 1) {
        theta_block(y - 2, y - 2) += w * r.h_bb;
        cross.row(y - 2) -= (w * (r.h_ab + r.h_bb)) * Z.row(i);
      }
      if (y < L && y > 1) {
        theta_block(y - 1, y - 2) += w * r.h_ab;
        theta_block(y - 2, y - 1) += w * r.h_ab;
      }
    }
  }
  ev.value -= lambda * beta.squaredNorm();
  ev.gradient.tail(d) = Z.transpose() * s_grad - 2.0 * lambda * beta;
  if (with_hessian) {
    ev.hessian.resize(m + d, m + d);
    ev.hessian.topLeftCorner(m, m) = theta_block;
    ev.hessian.topRightCorner(m, d) = cross;
    ev.hessian.bottomLeftCorner(d, m) = cross.transpose();
    Eigen::MatrixXd bb = Eigen::MatrixXd::Zero(d, d);
    bb.selfadjointView<Eigen::Lower>().rankUpdate(Z.transpose() * s_beta.cwiseAbs().cwiseSqrt().asDiagonal(), -1.0);
    // s_beta <= 0 for a log-concave likelihood; the rank update above adds
    // -|s| z z'. Rows with a positive coefficient (rounding) are corrected.
    for (Eigen::Index i = 0; i < n; ++i)
      if (s_beta(i) > 0.0) bb.selfadjointView<Eigen::Lower>().rankUpdate(Z.row(i).transpose(), 2.0 * s_beta(i));
    ev.hessian.bottomRightCorner(d, d) = bb.selfadjointView<Eigen::Lower>();
    ev.hessian.bottomRightCorner(d, d).diagonal().array() -= 2.0 * lambda;
  }
  return ev;
}

bool strictly_increasing(const Eigen::VectorXd& t) {
  for (Eigen::Index j = 1; j < t.size(); ++j)
    if (!(t(j) > t(j - 1))) return false;
  return true;
}

}  // namespace

int ordinal_feature_count(int num_covariates, int num_arms) {
  return 2 * num_covariates + (num_arms - 1) * (num_covariates + 1);
}

Eigen::VectorXd ordinal_feature_map(std::span<const double> x, ArmIndex arm, int num_arms) {
  const int p = static_cast<int>(x.size());
  if (arm < 0 || arm >= num_arms) throw std::invalid_argument("ordinal_feature_map: arm out of range");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(ordinal_feature_count(p, num_arms));
  for (int j = 0; j < p; ++j) {
    z(j) = x[static_cast<std::size_t>(j)];
    z(p + j) = x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
  }
  if (arm > 0) {
    z(2 * p + arm - 1) = 1.0;
    const int base = 2 * p + (num_arms - 1) + (arm - 1) * p;
    for (int j = 0; j < p; ++j) z(base + j) = x[static_cast<std::size_t>(j)];
  }
  return z;
}

Eigen::VectorXd OrdinalModel::features(std::span<const double> x, ArmIndex arm) const {
  std::vector<double> s(x.begin(), x.end());
  for (std::size_t j = 0; j < s.size() && static_cast<Eigen::Index>(j) < center.size(); ++j)
    s[j] = (s[j] - center(static_cast<Eigen::Index>(j))) / scale(static_cast<Eigen::Index>(j));
  return ordinal_feature_map(s, arm, num_arms);
}

Eigen::VectorXd OrdinalModel::level_probabilities(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const double eta = beta.size() ? z.dot(beta) : 0.0;
  const int L = num_levels();
  Eigen::VectorXd p(L);
  double prev = 0.0;
  for (int j = 0; j < L - 1; ++j) {
    const double cum = sigmoid(thresholds(j) - eta);
    p(j) = std::max(cum - prev, 0.0);
    prev = std::max(cum, prev);
  }
  p(L - 1) = 1.0 - prev;
  return p;
}

Eigen::VectorXd OrdinalModel::level_probabilities(std::span<const double> x, ArmIndex arm) const {
  return level_probabilities(features(x, arm));
}

double OrdinalModel::conditional_mean(std::span<const double> x, ArmIndex arm) const {
  const Eigen::VectorXd p = level_probabilities(x, arm);
  double m = 0.0;
  for (int j = 0; j < p.size(); ++j) m += p(j) * level_value(j + 1);
  return m;
}

nlohmann::json ordinal_to_json(const OrdinalModel& m) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"family", "proportional-odds-logit"},
          {"thresholds", vec(m.thresholds)},
          {"beta", vec(m.beta)},
          {"lambda", m.lambda},
          {"num_arms", m.num_arms},
          {"center", vec(m.center)},
          {"scale", vec(m.scale)},
          {"lowest_level_value", m.lowest_level_value},
          {"feature_map", "x, x^2, arm dummies (1..K-1), x*dummy arm-major"}};
}

OrdinalModel ordinal_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  OrdinalModel m;
  m.thresholds = vec(j.at("thresholds"));
  m.beta = vec(j.at("beta"));
  m.lambda = j.at("lambda").get<double>();
  m.num_arms = j.at("num_arms").get<int>();
  m.center = vec(j.at("center"));
  m.scale = vec(j.at("scale"));
  m.lowest_level_value = j.value("lowest_level_value", -10);
  if (!strictly_increasing(m.thresholds)) throw ValidationError("ordinal model thresholds must increase");
  return m;
}

OrdinalObjective ordinal_objective(const Eigen::MatrixXd& Z, std::span<const int> levels,
                                   std::span<const double> weights, const Eigen::VectorXd& thresholds,
                                   const Eigen::VectorXd& beta, double lambda) {
  auto ev = evaluate(Z, levels, weights, thresholds, beta, lambda, false);
  return {ev.value, std::move(ev.gradient)};
}

OrdinalModel fit_ordinal(const Eigen::MatrixXd& X, std::span<const ArmIndex> arms, std::span<const int> levels,
                         int num_levels, int num_arms, double lambda, const OrdinalFitOptions& options,
                         OrdinalFitReport* report) {
  const Eigen::Index n = X.rows();
  const int p = static_cast<int>(X.cols());
  if (num_levels < 2) throw std::invalid_argument("fit_ordinal: need at least two levels");
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_ordinal: lambda must be positive");
  if (static_cast<Eigen::Index>(arms.size()) != n || static_cast<Eigen::Index>(levels.size()) != n)
    throw std::invalid_argument("fit_ordinal: row mismatch");
  if (n == 0) throw std::invalid_argument("fit_ordinal: no rows");
  if (!X.allFinite()) throw ValidationError("fit_ordinal: non-finite feature");
  for (int y : levels)
    if (y < 1 || y > num_levels) throw ValidationError("fit_ordinal: level out of range");

  OrdinalModel model;
  model.lambda = lambda;
  model.num_arms = num_arms;
  model.lowest_level_value = options.lowest_level_value;
  model.center = Eigen::VectorXd::Zero(p);
  model.scale = Eigen::VectorXd::Ones(p);
  if (options.standardize) {
    model.center = X.colwise().mean().transpose();
    for (int j = 0; j < p; ++j) {
      const double sd = std::sqrt((X.col(j).array() - model.center(j)).square().mean());
      model.scale(j) = sd > 1e-12 ? sd : 1.0;
    }
  }

  const int d = ordinal_feature_count(p, num_arms);
  const bool pseudo = options.level_pseudocount > 0.0;
  const Eigen::Index rows = n + (pseudo ? num_levels : 0);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(rows, d);
  std::vector<int> y(static_cast<std::size_t>(rows));
  std::vector<double> w(static_cast<std::size_t>(rows), 1.0);
  std::vector<double> x(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x[static_cast<std::size_t>(j)] = X(i, j);
    Z.row(i) = model.features(x, arms[static_cast<std::size_t>(i)]).transpose();
    y[static_cast<std::size_t>(i)] = levels[static_cast<std::size_t>(i)];
  }
  if (pseudo) {
    for (int l = 0; l < num_levels; ++l) {
      y[static_cast<std::size_t>(n + l)] = l + 1;
      w[static_cast<std::size_t>(n + l)] = options.level_pseudocount;
    }
  }

  // Start from the marginal cumulative logits.
  std::vector<double> freq(static_cast<std::size_t>(num_levels), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) freq[static_cast<std::size_t>(y[i] - 1)] += w[i];
  const double total = std::accumulate(freq.begin(), freq.end(), 0.0);
  Eigen::VectorXd theta(num_levels - 1);
  double cum = 0.0;
  for (int j = 0; j < num_levels - 1; ++j) {
    cum += freq[static_cast<std::size_t>(j)];
    double q = std::clamp(cum / total, 1e-6, 1.0 - 1e-6);
    theta(j) = std::log(q / (1.0 - q));
    if (j > 0 && theta(j) <= theta(j - 1)) theta(j) = theta(j - 1) + 1e-3;
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);

  OrdinalFitReport rep;
  Evaluation ev = evaluate(Z, y, w, theta, beta, lambda, true);
  for (rep.iterations = 0; rep.iterations < options.max_iterations; ++rep.iterations) {
    rep.gradient_norm = ev.gradient.norm();
    if (rep.gradient_norm <= options.gradient_tolerance) {
      rep.converged = true;
      break;
    }
    Eigen::MatrixXd neg_h = -ev.hessian;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_h);
    Eigen::VectorXd step = ldlt.solve(ev.gradient);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = ev.gradient * 1e-3;
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half, t *= 0.5) {
      Eigen::VectorXd th = theta + t * step.head(num_levels - 1);
      if (!strictly_increasing(th)) continue;
      Eigen::VectorXd be = beta + t * step.tail(d);
      Evaluation trial = evaluate(Z, y, w, th, be, lambda, false);
      if (std::isfinite(trial.value) && trial.value >= ev.value - 1e-12 * std::abs(ev.value)) {
        theta = std::move(th);
        beta = std::move(be);
        moved = true;
        break;
      }
    }
    if (!moved) break;
    ev = evaluate(Z, y, w, theta, beta, lambda, true);
  }
  rep.gradient_norm = ev.gradient.norm();
  rep.converged = rep.gradient_norm <= options.gradient_tolerance;
  if (report) *report = rep;
  model.thresholds = std::move(theta);
  model.beta = std::move(beta);
  return model;
}

int sample_level(const Eigen::VectorXd& probabilities, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  for (Eigen::Index j = 0; j < probabilities.size(); ++j) {
    cum += probabilities(j);
    if (u < cum) return static_cast<int>(j) + 1;
  }
  // u landed in the rounding gap above the last cumulative sum
  for (Eigen::Index j = probabilities.size() - 1; j >= 0; --j)
    if (probabilities(j) > 0.0) return static_cast<int>(j) + 1;
  return static_cast<int>(probabilities.size());
}

double sample_outcome(const OrdinalModel& model, std::span<const double> x, ArmIndex arm, Rng& rng) {
  return model.level_value(sample_level(model.level_probabilities(x, arm), rng));
}

std::vector<int> outcome_levels(const Eigen::VectorXd& y, int lowest_level_value, int num_levels) {
  std::vector<int> levels(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double lvl = y(i) - lowest_level_value + 1;
    if (lvl != std::round(lvl) || lvl < 1 || lvl > num_levels)
      throw ValidationError("outcome " + std::to_string(y(i)) + " is not on the ordinal scale");
    levels[static_cast<std::size_t>(i)] = static_cast<int>(lvl);
  }
  return levels;
}

OneSeSelection one_se_rule(const std::vector<double>& lambdas, const Eigen::MatrixXd& fold_mse) {
  OneSeSelection sel;
  sel.lambdas = lambdas;
  const Eigen::Index folds = fold_mse.rows();
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    const Eigen::VectorXd col = fold_mse.col(static_cast<Eigen::Index>(l));
    const double mean = col.mean();
    const double var = folds > 1 ? (col.array() - mean).square().sum() / static_cast<double>(folds - 1) : 0.0;
    sel.cv_mean.push_back(mean);
    sel.cv_se.push_back(std::sqrt(var / static_cast<double>(folds)));
  }
  for (std::size_t l = 1; l < lambdas.size(); ++l)
    if (sel.cv_mean[l] < sel.cv_mean[sel.best]) sel.best = l;
  const double bound = sel.cv_mean[sel.best] + sel.cv_se[sel.best];
  for (std::size_t l = 0; l < lambdas.size(); ++l)
    if (sel.cv_mean[l] <= bound) sel.selected.push_back(lambdas[l]);
  return sel;
}

OneSeSelection select_regularization_one_se(const Eigen::MatrixXd& X, std::span<const ArmIndex> arms,
                                            std::span<const int> levels, int num_levels, int num_arms,
                                            const std::vector<double>& lambdas, int folds, std::uint64_t seed,
                                            const OrdinalFitOptions& options) {
  const Eigen::Index n = X.rows();
  if (folds < 2) throw std::invalid_argument("select_regularization_one_se: need at least 2 folds");
  if (n < folds) throw std::invalid_argument("select_regularization_one_se: fewer rows than folds");
  if (lambdas.empty()) throw std::invalid_argument("select_regularization_one_se: no candidate lambdas");

  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed, Purpose::CrossValidation);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i) fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

  const double lo = options.lowest_level_value;
  const double range = static_cast<double>(num_levels - 1);
  Eigen::MatrixXd fold_mse(folds, static_cast<Eigen::Index>(lambdas.size()));
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    Eigen::MatrixXd Xt(static_cast<Eigen::Index>(train.size()), X.cols());
    std::vector<ArmIndex> at;
    std::vector<int> yt;
    for (std::size_t r = 0; r < train.size(); ++r) {
      Xt.row(static_cast<Eigen::Index>(r)) = X.row(train[r]);
      at.push_back(arms[static_cast<std::size_t>(train[r])]);
      yt.push_back(levels[static_cast<std::size_t>(train[r])]);
    }
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      const OrdinalModel m = fit_ordinal(Xt, at, yt, num_levels, num_arms, lambdas[l], options);
      double sse = 0.0;
      std::vector<double> x(static_cast<std::size_t>(X.cols()));
      for (Eigen::Index i : test) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
        const double pred = (m.conditional_mean(x, arms[static_cast<std::size_t>(i)]) - lo) / range;
        const double obs = (m.level_value(levels[static_cast<std::size_t>(i)]) - lo) / range;
        sse += (pred - obs) * (pred - obs);
      }
      fold_mse(f, static_cast<Eigen::Index>(l)) = sse / static_cast<double>(test.size());
    }
  }
  return one_se_rule(lambdas, fold_mse);
}

OneSeSelection select_regularization_one_se(const ObservationLog& log, const std::vector<double>& lambdas,
                                            int folds, std::uint64_t seed) {
  const auto& schema = log.schema();
  const int lowest = static_cast<int>(std::lround(schema.outcome_lo()));
  const int L = static_cast<int>(std::lround(schema.outcome_hi())) - lowest + 1;
  OrdinalFitOptions opt;
  opt.lowest_level_value = lowest;
  const auto arms = log.arm_column();
  const auto levels = outcome_levels(log.outcomes(), lowest, L);
  return select_regularization_one_se(log.contexts(), arms, levels, L, log.arms().size(), lambdas, folds, seed, opt);
}

}  // namespace cbx
