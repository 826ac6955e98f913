#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbx/core_types.hpp"
#include "cbx/pipeline.hpp"

namespace cbx {

// eps / K + (1 - eps) / 2 * 1{pi^C(x) = w} + (1 - eps) / 2 * 1{pi^N(x) = w}.
Eigen::VectorXd evaluation_mixture_propensity(std::span<const double> x, const TreePolicy& contextual,
                                              const FixedPolicy& fixed, double epsilon, int num_arms);
Eigen::MatrixXd evaluation_mixture(const Eigen::MatrixXd& contexts, const TreePolicy& contextual,
                                   const FixedPolicy& fixed, double epsilon, int num_arms);

struct ValueEstimate {
  double estimate = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

// Per-row inverse-propensity score 1{W = pi(X)} / e(X, pi(X)) * Y.
Eigen::VectorXd ipw_policy_scores(const ObservationLog& log, const TreePolicy& policy);

// Mean of the IPW scores with the plug-in standard error sd / sqrt(n).
ValueEstimate estimate_policy_value(const ObservationLog& log, const TreePolicy& policy);

struct DifferenceTest {
  double diff = 0.0;
  double se = 0.0;
  double p_value = 0.5;  // one-sided, H0: value(A) <= value(B)
  std::size_t n = 0;
};

// Upper-tail normal p-value of diff / se; 0.5 when both are zero.
double one_sided_p_value(double diff, double se);

DifferenceTest test_value_difference(const ObservationLog& log, const TreePolicy& a, const TreePolicy& b);

// Same test on a subset of rows.
DifferenceTest test_value_difference(const ObservationLog& log, const TreePolicy& a, const TreePolicy& b,
                                     const std::vector<std::size_t>& rows);

struct RegionContrast {
  ArmIndex arm = 0;  // pi^C's arm on the region
  std::string description;
  std::size_t n = 0;
  std::optional<DifferenceTest> test;  // absent when n < 2
};

// Value of pi^C minus pi^N restricted to each region's rows.
std::vector<RegionContrast> contrast_per_region(const ObservationLog& log, const TreePolicy& contextual,
                                                const FixedPolicy& fixed, const std::vector<Region>& regions);

struct Subgroup {
  std::string name;
  std::function<bool(std::span<const double>)> contains;
};

// Liberal / conservative (political_leaning < 4), young / older (age < 30),
// pro-choice / anti-choice (views_abortion <= 3), for the features the
// schema declares.
std::vector<Subgroup> default_subgroups(const ContextSchema& schema);

struct SubgroupCell {
  std::string subgroup;
  ArmIndex arm = 0;
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> se;  // needs n >= 2
};

// Mean outcome per (subgroup, arm) over the rows assigned to that arm.
std::vector<SubgroupCell> subgroup_means(const ObservationLog& log, const std::vector<Subgroup>& subgroups);

// Propensity rows the design would emit for `contexts` given the history and
// the 0-based batch index.
using PropensityReplay = std::function<Eigen::MatrixXd(const ObservationLog&, const Eigen::MatrixXd&, int)>;

struct DescriptiveRow {
  std::string statistic;  // mean_reward, mean_propensity, recommended_arm_probability, median_context_propensity
  int batch = 0;
  std::string subgroup;   // "all" or a subgroup name
  std::string arm;        // empty where not applicable
  double value = 0.0;
  std::optional<double> se;
  std::size_t n = 0;
};

// Per-batch statistics for the figures. Median-context trajectories need a
// replay of the design and are skipped when `replay` is empty.
std::vector<DescriptiveRow> batch_descriptives(const ObservationLog& log, const TreePolicy& contextual,
                                               const std::vector<Subgroup>& subgroups,
                                               const PropensityReplay& replay = {});

// Share of p-values strictly below alpha.
double power_across_sims(const std::vector<double>& p_values, double alpha = 0.05);

}  // namespace cbx
