#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"
#include "cbx/linear_models.hpp"
#include "cbx/rng.hpp"

namespace cbx {

enum class Algorithm { Uniform, TreeBagging, BootstrapThompson, BootstrapES, BootstrapTTTS };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct BanditConfig {
  Algorithm algorithm = Algorithm::TreeBagging;
  int ensemble_size = 50;           // S
  double floor_exponent = 1.0 / 16;  // alpha in t^-alpha / K
  int ensemble_depth = 2;           // depth of the trees inside the ensemble
  int max_thresholds = 16;
  int crossfit_subset = 50;
  int bootstrap_fits = 50;          // M
  int posterior_draws = 1000;       // N
  double top_two_beta = 0.5;
  double min_propensity = 1e-3;     // floor for the Thompson family
  int lasso_folds = 5;
  int batch_size = 150;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

nlohmann::json bandit_config_to_json(const BanditConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
BanditConfig bandit_config_from_json(const nlohmann::json& j);

// Every entry 1/K.
Eigen::MatrixXd uniform_assign(Eigen::Index rows, int num_arms);

// S trees fit on bootstrap resamples of (context, AIPW score row) pairs from
// `history`. Outcome models are cross-fitted on earlier subsets and every arm
// is scored with the logged propensities. Empty when `history` is.
std::vector<TreePolicy> fit_bagging_ensemble(const ObservationLog& history, const BanditConfig& config, int batch);

// Vote shares of the ensemble at each context.
Eigen::MatrixXd ensemble_votes(const std::vector<TreePolicy>& ensemble, const Eigen::MatrixXd& contexts, int num_arms);

// Vote shares passed through the floor f(t) = t^-alpha / K, t the 1-based
// index of the first row of the new batch. Empty history gives uniform rows.
Eigen::MatrixXd treebagging_assign(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                   const BanditConfig& config, int batch,
                                   std::vector<TreePolicy>* ensemble_out = nullptr);

// Per-arm bootstrap lasso fits on contexts rescaled by the schema ranges.
struct BootstrapLinearModel {
  int num_arms = 0;
  Eigen::VectorXd offset, span;  // x_scaled = (x - offset) / span
  std::vector<double> lambdas;    // per arm
  // fits[w] holds one (intercept, coef) per bootstrap sample in which arm w
  // appeared; an arm absent from every sample has no fits.
  std::vector<std::vector<LinearFit>> fits;

  // Mean and variance (1/M) of the fitted rewards across bootstrap fits;
  // (0, 1) for an arm without fits.
  void moments(std::span<const double> x, Eigen::VectorXd& mean, Eigen::VectorXd& var) const;
};

BootstrapLinearModel fit_bootstrap_linear(const ObservationLog& history, const BanditConfig& config, int batch);

// Share of N joint normal draws in which each arm is largest (p) and second
// largest (q). Ties go to the lower arm index.
struct ThompsonTally {
  Eigen::VectorXd best;
  Eigen::VectorXd runner_up;
};
ThompsonTally thompson_tally(const Eigen::VectorXd& mean, const Eigen::VectorXd& var, int draws, Rng& rng);

// p(1 - p), normalized; falls back to p when some arm has p == 1.
Eigen::VectorXd exploration_sampling_weights(const Eigen::VectorXd& p);
// beta p + (1 - beta) q.
Eigen::VectorXd top_two_weights(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double beta);

// Thompson family: `algorithm` picks which transform of the tallies is used.
// Identical contexts share a draw stream and therefore a row.
Eigen::MatrixXd bootstrap_family_assign(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                        const BanditConfig& config, int batch);

// Dispatches on config.algorithm. `batch` is the 0-based index of the batch
// being proposed; it keys the random streams.
Eigen::MatrixXd propose_propensities(const ObservationLog& history, const Eigen::MatrixXd& contexts,
                                     const BanditConfig& config, int batch,
                                     std::vector<TreePolicy>* ensemble_out = nullptr);

// One categorical draw per row.
std::vector<ArmIndex> sample_arms(const Eigen::MatrixXd& propensities, Rng& rng);
ArmIndex sample_arm(std::span<const double> probabilities, Rng& rng);

}  // namespace cbx
