#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbx/bandits.hpp"
#include "cbx/core_types.hpp"
#include "cbx/ordinal.hpp"
#include "cbx/pipeline.hpp"
#include "cbx/rng.hpp"

namespace cbx {

// A simulation environment over a finite context pool. Contexts are drawn
// uniformly from the pool; outcomes come either from a per-(row, arm)
// categorical distribution over unit-spaced levels or from Gaussian noise
// around the mean.
class SimEnvironment {
 public:
  SimEnvironment(ContextSchema schema, ArmSet arms, Eigen::MatrixXd contexts, Eigen::MatrixXd means,
                 double noise_sd);
  // level_probs: one (pool x K) matrix per level; level l has value lowest + l.
  SimEnvironment(ContextSchema schema, ArmSet arms, Eigen::MatrixXd contexts,
                 std::vector<Eigen::MatrixXd> level_probs, int lowest_level_value);

  const ContextSchema& schema() const noexcept { return schema_; }
  const ArmSet& arms() const noexcept { return arms_; }
  int num_arms() const noexcept { return arms_.size(); }
  std::size_t pool_size() const noexcept { return static_cast<std::size_t>(contexts_.rows()); }
  const Eigen::MatrixXd& contexts() const noexcept { return contexts_; }
  const Eigen::MatrixXd& means() const noexcept { return means_; }
  double mean(std::size_t row, ArmIndex w) const { return means_(static_cast<Eigen::Index>(row), w); }
  // argmax_w mean, ties to the lower index.
  ArmIndex optimal_arm(std::size_t row) const { return optimal_[row]; }
  // Outcome by inversion of the outcome CDF at u in [0, 1).
  double outcome(std::size_t row, ArmIndex w, double u) const;

  nlohmann::json metadata;

 private:
  ContextSchema schema_;
  ArmSet arms_;
  Eigen::MatrixXd contexts_;
  Eigen::MatrixXd means_;
  std::vector<ArmIndex> optimal_;
  double noise_sd_ = 0.0;
  std::vector<Eigen::MatrixXd> cumulative_;  // empty for Gaussian outcomes
  int lowest_level_value_ = 0;
};

// Fits the ordinal model on a bootstrap resample of the corpus with a penalty
// drawn uniformly from `lambdas`, and tabulates means and level
// probabilities on the corpus contexts.
SimEnvironment build_dgp(const ObservationLog& corpus, const std::vector<double>& lambdas, std::uint64_t seed,
                         std::uint64_t replicate, const OrdinalFitOptions& options = {});

// Same from an already fitted model.
SimEnvironment environment_from_model(const OrdinalModel& model, const ContextSchema& schema, const ArmSet& arms,
                                      const Eigen::MatrixXd& pool);

struct ExperimentConfig {
  int total_periods = 3000;
  double learning_fraction = 0.5;
  int batch_size = 150;
  double epsilon = 0.3;
  int eval_contexts = 10000;
  BanditConfig bandit;
  PipelineConfig pipeline;
  std::uint64_t seed = 0;

  int learning_periods() const;
  int learning_batches() const { return learning_periods() / batch_size; }
  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
// Accepts {"bandit": {...}, "pipeline": {...}, ...}; missing keys keep defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct SimSummary {
  Algorithm algorithm = Algorithm::Uniform;
  double lambda = 0.0;
  std::uint64_t replicate = 0;
  double learned_value = 0.0;   // E[mu(x, pi^C(x))] over the evaluation draw
  double fixed_value = 0.0;     // E[mu(x, pi^N)]
  double optimal_value = 0.0;   // E[mu(x, pi*(x))]
  double regret = 0.0;          // mean per-period regret while the design collects data
  double evaluation_regret = 0.0;
  double overall_regret = 0.0;  // over all T periods
  std::vector<double> batch_regret;  // per batch, in order
  double estimated_diff = 0.0;  // IPW pi^C - pi^N on evaluation rows
  double diff_se = 0.0;
  double p_value = 0.5;
  int depth = 0;
  std::vector<ArmIndex> selected;
  ArmIndex fixed_arm = 0;
};

// Indices into the environment pool for the study-wide evaluation draw.
std::vector<std::size_t> draw_eval_contexts(std::size_t pool_size, int count, std::uint64_t seed);

// One batched experiment: adaptive learning phase, policy learning, then the
// evaluation mixture. Contexts and the uniforms driving arm and outcome draws
// depend only on (seed, replicate), so designs compared on the same
// replicate see common random numbers. Only TreeBagging prunes arms before
// policy learning; the other designs learn over all K arms. `log_out`
// receives the full log.
SimSummary run_replicate(const SimEnvironment& env, const ExperimentConfig& config, std::uint64_t replicate,
                         const std::vector<std::size_t>& eval_rows, ObservationLog* log_out = nullptr);

using DgpBuilder = std::function<SimEnvironment(double lambda, std::uint64_t replicate)>;

struct StudySpec {
  std::vector<Algorithm> algorithms{Algorithm::Uniform, Algorithm::TreeBagging, Algorithm::BootstrapThompson,
                                    Algorithm::BootstrapES, Algorithm::BootstrapTTTS};
  std::vector<double> lambdas{10};
  int replicates = 200;
  // Number of distinct fitted environments per lambda; replicate r uses
  // environment r mod dgp_fits. 0 means one per replicate.
  int dgp_fits = 0;
  int threads = 1;
};

struct StudyResult {
  std::vector<SimSummary> records;  // ordered by (lambda, replicate, algorithm)
};

StudyResult run_study(const DgpBuilder& builder, const ExperimentConfig& base, const StudySpec& spec);

struct CellSummary {
  Algorithm algorithm;
  double lambda;
  std::size_t n = 0;
  double value_mean = 0.0, value_se = 0.0;
  double regret_mean = 0.0, regret_se = 0.0;
  double power = 0.0;
  double diff_estimate_mean = 0.0, diff_se_mean = 0.0, true_diff_mean = 0.0;
};
std::vector<CellSummary> summarize(const StudyResult& r);

struct PairedComparison {
  double mean_diff = 0.0;  // mean over replicates of (a - b)
  double se = 0.0;
  double p_value = 0.5;    // one-sided, H0: mean_diff <= 0
  double ratio = 0.0;      // mean(a) / mean(b)
  std::size_t n = 0;
};
// Pairs replicates of two algorithms at one lambda on a metric.
PairedComparison paired_comparison(const StudyResult& r, Algorithm a, Algorithm b, double lambda,
                                   const std::function<double(const SimSummary&)>& metric);

// Tidy rows: algorithm,lambda,replicate,metric,value.
std::string study_tidy_csv(const StudyResult& r);
// Table-shaped: rows per algorithm, one column per lambda with
// "mean (se)" cells, and a TreeBagging / Uniform ratio row.
std::string study_table_csv(const StudyResult& r, bool value_table);
std::string study_summary_csv(const StudyResult& r);

enum class SweepParameter { EvaluationFraction, FloorExponent, SelectedArms, TotalLength };
SweepParameter sweep_parameter_from_string(const std::string& s);
std::string to_string(SweepParameter p);

struct SweepPoint {
  double value = 0.0;
  std::vector<CellSummary> cells;
};

std::vector<SweepPoint> parameter_sweep(const DgpBuilder& builder, const ExperimentConfig& base, const StudySpec& spec,
                                        SweepParameter parameter, const std::vector<double>& grid);
std::string sweep_csv(SweepParameter parameter, const std::vector<SweepPoint>& points);

enum class Profile { Desk, Full };
Profile profile_from_string(const std::string& s);
// Desk: 200 replicates, S = 20, ensemble depth 1. Full: 1000, S = 50, depth 2.
void apply_profile(Profile p, ExperimentConfig& config, StudySpec& spec);

}  // namespace cbx
