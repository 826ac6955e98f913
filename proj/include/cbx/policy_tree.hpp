#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"

namespace cbx {

struct TreeSearchOptions {
  int depth = 1;           // 0..3
  int max_thresholds = 16;  // candidate cut points per feature
  int threads = 1;          // workers over root splits
};

struct TreeSolution {
  TreePolicy policy;
  double objective = 0.0;  // sum over rows of the score of the assigned arm
};

// Candidate cut points for one feature: midpoints between consecutive
// distinct values, thinned to at most `max_thresholds` quantile cuts.
std::vector<double> candidate_thresholds(const Eigen::VectorXd& values, int max_thresholds);

// Exact maximizer of sum_t score_t(pi(x_t)) over trees of depth <= d whose
// cut points lie on the candidate grid. Ties resolve to the lower feature,
// then the lower threshold, then the lower arm; a leaf is kept unless a split
// is strictly better. Leaves carry arms from `table.eligible_arms`.
TreeSolution solve_tree(const AipwScoreTable& table, const Eigen::MatrixXd& contexts,
                        const TreeSearchOptions& options);

// Same search over a raw score matrix; leaves carry column indices.
TreeSolution solve_tree(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& contexts,
                        const TreeSearchOptions& options);

// Mean of score_t(pi(x_t)).
double evaluate_policy_on_scores(const TreePolicy& policy, const AipwScoreTable& table,
                                 const Eigen::MatrixXd& contexts);

struct DepthSelection {
  int depth = 1;
  TreePolicy policy;                  // refit on all rows at `depth`
  std::vector<double> heldout_values;  // one per candidate depth, same order
};

// Fits each depth on the first `train_fraction` of rows (chronological),
// scores it on the rest, keeps the best (ties to the smaller depth) and
// refits it on everything.
DepthSelection select_depth_by_cv(const AipwScoreTable& table, const Eigen::MatrixXd& contexts,
                                  const std::vector<int>& depths, double train_fraction = 0.8,
                                  int max_thresholds = 16, int threads = 1);

nlohmann::json tree_to_json(const TreePolicy& policy, const ContextSchema& schema, const ArmSet& arms);
TreePolicy tree_from_json(const nlohmann::json& j, const ContextSchema& schema, const ArmSet& arms);

// Indented rendering, one node per line:
//   political_leaning <= 3.5
//     age <= 29.5
//       * blm
std::string render_tree(const TreePolicy& policy, const ContextSchema& schema, const ArmSet& arms);

}  // namespace cbx
