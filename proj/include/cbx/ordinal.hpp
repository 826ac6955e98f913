#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"
#include "cbx/rng.hpp"

namespace cbx {

// [x (p), x^2 (p), arm dummies for arms 1..K-1, x * dummy (arm-major)].
// Length 2p + (K-1)(p+1); arm 0 is the baseline.
Eigen::VectorXd ordinal_feature_map(std::span<const double> x, ArmIndex arm, int num_arms);
int ordinal_feature_count(int num_covariates, int num_arms);

// Proportional-odds model: P(Y <= j | z) = sigmoid(theta_j - z' beta) for
// levels j = 1..L-1, where z is the feature map of the standardized context.
struct OrdinalModel {
  Eigen::VectorXd thresholds;  // L-1, strictly increasing
  Eigen::VectorXd beta;        // over the feature map
  double lambda = 0.0;
  int num_arms = 0;
  Eigen::VectorXd center;  // covariate standardization
  Eigen::VectorXd scale;
  int lowest_level_value = -10;  // outcome value of level 1

  int num_levels() const noexcept { return static_cast<int>(thresholds.size()) + 1; }
  Eigen::VectorXd features(std::span<const double> x, ArmIndex arm) const;
  // Class probabilities for a feature-mapped row.
  Eigen::VectorXd level_probabilities(const Eigen::Ref<const Eigen::VectorXd>& z) const;
  Eigen::VectorXd level_probabilities(std::span<const double> x, ArmIndex arm) const;
  double level_value(int level) const noexcept { return lowest_level_value + level - 1; }
  // E[Y | x, w] on the outcome scale.
  double conditional_mean(std::span<const double> x, ArmIndex arm) const;
};

nlohmann::json ordinal_to_json(const OrdinalModel& m);
OrdinalModel ordinal_from_json(const nlohmann::json& j);

// Penalized log-likelihood sum_i w_i log P(y_i | z_i) - lambda ||beta||^2 and
// its gradient in (thresholds, beta) order. Rows are already feature-mapped.
struct OrdinalObjective {
  double value = 0.0;
  Eigen::VectorXd gradient;
};
OrdinalObjective ordinal_objective(const Eigen::MatrixXd& Z, std::span<const int> levels,
                                   std::span<const double> weights, const Eigen::VectorXd& thresholds,
                                   const Eigen::VectorXd& beta, double lambda);

struct OrdinalFitOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 200;
  // Weight of one pseudo-observation per level at the centered context.
  // Keeps every threshold finite when a level is absent from the sample;
  // it only touches the thresholds because z = 0 there.
  double level_pseudocount = 0.01;
  bool standardize = true;
  int lowest_level_value = -10;
};

struct OrdinalFitReport {
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

// Newton ascent with step halving on the penalized proportional-odds
// likelihood. `levels` are 1-based in 1..L; `X` holds raw covariates.
OrdinalModel fit_ordinal(const Eigen::MatrixXd& X, std::span<const ArmIndex> arms, std::span<const int> levels,
                         int num_levels, int num_arms, double lambda, const OrdinalFitOptions& options = {},
                         OrdinalFitReport* report = nullptr);

// Draws a level from the model and returns its outcome value.
double sample_outcome(const OrdinalModel& model, std::span<const double> x, ArmIndex arm, Rng& rng);
int sample_level(const Eigen::VectorXd& probabilities, Rng& rng);

struct OneSeSelection {
  std::vector<double> lambdas;
  std::vector<double> cv_mean;  // normalized MSE on [0, 1]
  std::vector<double> cv_se;
  std::vector<double> selected;
  std::size_t best = 0;
};

// K-fold CV of the ordinal model's conditional mean, with responses and
// predictions rescaled to [0, 1]; keeps every lambda whose mean CV error is
// within one standard error of the best (inclusive).
OneSeSelection select_regularization_one_se(const Eigen::MatrixXd& X, std::span<const ArmIndex> arms,
                                            std::span<const int> levels, int num_levels, int num_arms,
                                            const std::vector<double>& lambdas, int folds, std::uint64_t seed,
                                            const OrdinalFitOptions& options = {});

OneSeSelection select_regularization_one_se(const ObservationLog& log, const std::vector<double>& lambdas,
                                            int folds, std::uint64_t seed);

// Applies the one-SE rule to precomputed fold scores (folds x lambdas).
OneSeSelection one_se_rule(const std::vector<double>& lambdas, const Eigen::MatrixXd& fold_mse);

// Maps outcome values on [lo, hi] with unit spacing to 1-based levels.
std::vector<int> outcome_levels(const Eigen::VectorXd& y, int lowest_level_value, int num_levels);

}  // namespace cbx
