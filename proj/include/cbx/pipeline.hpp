#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbx/bandits.hpp"
#include "cbx/core_types.hpp"
#include "cbx/policy_tree.hpp"

namespace cbx {

// Which contexts enter the frequency score: every learning-phase row, or
// only the rows of the last learning batch.
enum class FrequencyContexts { LearningPhase, LastBatch };

struct PipelineConfig {
  int top_k = 4;
  int subset_size = 50;
  std::vector<int> depths{1, 2};
  double train_fraction = 0.8;
  int max_thresholds = 16;
  FrequencyContexts frequency_contexts = FrequencyContexts::LearningPhase;
  int threads = 1;

  void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct PipelineResult {
  std::vector<double> frequency;      // per arm of the full set
  std::vector<ArmIndex> selected;      // ascending arm index
  std::vector<std::size_t> retained;   // learning rows assigned to a selected arm
  AipwScoreTable scores;               // over retained rows and selected arms
  Eigen::VectorXd mean_scores;         // per selected arm
  DepthSelection depth;
  TreePolicy contextual;               // pi^C
  FixedPolicy fixed;                   // pi^N
};

// The k arms with the highest score, ties to the lower index, returned in
// ascending index order.
std::vector<ArmIndex> select_top_arms(const std::vector<double>& scores, int k);

// The ensemble the bagging design used for the last learning batch: refit on
// the rows before that batch with the batch's random stream. For a log whose
// only batch is the first one the ensemble is fit on that batch instead.
std::vector<TreePolicy> last_batch_ensemble(const ObservationLog& learning, const BanditConfig& config);

// Arm pruning, propensity renormalization, cross-fitting, AIPW scoring,
// depth selection and the best fixed arm. `ensemble` provides the frequency
// scores; with an empty ensemble every arm is kept and `frequency` is empty.
PipelineResult run_learning_pipeline(const ObservationLog& learning, const std::vector<TreePolicy>& ensemble,
                                     const PipelineConfig& config);

nlohmann::json pipeline_report(const PipelineResult& r, const ContextSchema& schema, const ArmSet& arms,
                               const PipelineConfig& config);

// Parsed back from a report: the two policies and the selected arms.
struct PolicyReport {
  TreePolicy contextual;
  FixedPolicy fixed;
  std::vector<ArmIndex> selected;
  std::vector<double> frequency;
  int depth = 0;
};
PolicyReport policy_report_from_json(const nlohmann::json& j, const ContextSchema& schema, const ArmSet& arms);

// Leaf-induced partition of the context space: one region per arm of the
// set, each a union of leaf boxes (possibly none).
struct Region {
  struct Condition {
    int feature = 0;
    double threshold = 0.0;
    bool at_most = true;  // x <= threshold when true, x > threshold otherwise
  };
  ArmIndex arm = 0;
  std::vector<std::vector<Condition>> leaves;

  bool empty() const noexcept { return leaves.empty(); }
  bool contains(std::span<const double> x) const;
  std::string describe(const ContextSchema& schema) const;
};

std::vector<Region> region_partition(const TreePolicy& policy, int num_arms);

}  // namespace cbx
