#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace cbx {

using ArmIndex = int;

enum class FeatureKind { IntegerOrdinal, Binary, Real };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Real;
  double lo = 0.0;
  double hi = 1.0;

  bool operator==(const FeatureSpec&) const = default;
};

// Ordered covariates plus the declared outcome range.
class ContextSchema {
 public:
  ContextSchema() = default;
  ContextSchema(std::vector<FeatureSpec> features, double outcome_lo, double outcome_hi);

  std::size_t size() const noexcept { return features_.size(); }
  const std::vector<FeatureSpec>& features() const noexcept { return features_; }
  const FeatureSpec& feature(std::size_t j) const { return features_.at(j); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  double outcome_lo() const noexcept { return outcome_lo_; }
  double outcome_hi() const noexcept { return outcome_hi_; }

  // Throws ValidationError naming the offending feature.
  void validate_context(std::span<const double> x) const;
  void validate_outcome(double y) const;

  bool operator==(const ContextSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
  double outcome_lo_ = -10.0;
  double outcome_hi_ = 10.0;
};

// Arm aliases in declaration order; index i is the i-th alias.
class ArmSet {
 public:
  ArmSet() = default;
  explicit ArmSet(std::vector<std::string> aliases);

  int size() const noexcept { return static_cast<int>(aliases_.size()); }
  const std::string& alias(ArmIndex w) const { return aliases_.at(static_cast<std::size_t>(w)); }
  const std::vector<std::string>& aliases() const noexcept { return aliases_; }
  std::optional<ArmIndex> index_of(const std::string& alias) const;
  ArmIndex require(const std::string& alias) const;

  bool operator==(const ArmSet&) const = default;

 private:
  std::vector<std::string> aliases_;
};

struct Observation {
  std::int64_t t = 0;  // 1-based period
  std::vector<double> x;
  ArmIndex arm = 0;
  double y = 0.0;
  std::vector<double> e;  // propensity over all K arms at assignment time
  int batch = 0;

  bool operator==(const Observation&) const = default;
};

// Append-only record of an experiment. `learning_rows` marks the end of the
// learning phase (rows [0, learning_rows) are adaptive).
class ObservationLog {
 public:
  ObservationLog() = default;
  ObservationLog(ContextSchema schema, ArmSet arms);

  const ContextSchema& schema() const noexcept { return schema_; }
  const ArmSet& arms() const noexcept { return arms_; }
  const std::vector<Observation>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const Observation& operator[](std::size_t i) const { return rows_[i]; }

  // Validates the row against the schema, the propensity contract and the
  // ordering invariants before appending.
  void append(Observation obs);

  std::optional<std::size_t> learning_rows() const noexcept { return learning_rows_; }
  void set_learning_rows(std::optional<std::size_t> n);

  // Free-form metadata (design config, seed) carried in the sidecar.
  const nlohmann::json& metadata() const noexcept { return metadata_; }
  void set_metadata(nlohmann::json meta) { metadata_ = std::move(meta); }

  ObservationLog prefix(std::size_t n) const;
  ObservationLog slice(std::size_t begin, std::size_t end) const;
  ObservationLog learning_phase() const;
  ObservationLog evaluation_phase() const;

  Eigen::MatrixXd contexts() const;
  std::vector<ArmIndex> arm_column() const;
  Eigen::VectorXd outcomes() const;
  Eigen::MatrixXd propensities() const;
  int last_batch() const noexcept { return rows_.empty() ? -1 : rows_.back().batch; }

  bool operator==(const ObservationLog&) const = default;

 private:
  ContextSchema schema_;
  ArmSet arms_;
  std::vector<Observation> rows_;
  std::optional<std::size_t> learning_rows_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

// Axis-aligned decision tree. Internal nodes send x to `left` when
// x[feature] <= threshold. Node 0 is the root.
struct TreePolicy {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    ArmIndex arm = 0;

    bool is_leaf() const noexcept { return feature < 0; }
    bool operator==(const Node&) const = default;
  };

  std::vector<Node> nodes;

  static TreePolicy constant(ArmIndex arm);

  ArmIndex predict(std::span<const double> x) const;
  int depth() const;
  std::vector<ArmIndex> leaf_arms() const;

  bool operator==(const TreePolicy&) const = default;
};

struct FixedPolicy {
  ArmIndex arm = 0;

  ArmIndex predict(std::span<const double>) const noexcept { return arm; }
  TreePolicy as_tree() const { return TreePolicy::constant(arm); }
  bool operator==(const FixedPolicy&) const = default;
};

// Per-row doubly robust scores for the eligible arms (column j <-> arm
// eligible_arms[j]).
struct AipwScoreTable {
  std::vector<ArmIndex> eligible_arms;
  Eigen::MatrixXd scores;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(scores.rows()); }
  int column_of(ArmIndex arm) const;
};

// Gamma_t(w) = mu_t(w) + 1{W_t = w} / e_t(w) * (Y_t - mu_t(w)) for every
// eligible w. `mu_hat` and `propensities` are n x |eligible|.
AipwScoreTable aipw_scores(std::span<const ArmIndex> arms, std::span<const double> outcomes,
                           const Eigen::MatrixXd& mu_hat, const Eigen::MatrixXd& propensities,
                           std::vector<ArmIndex> eligible_arms);

AipwScoreTable aipw_scores(const ObservationLog& log, const Eigen::MatrixXd& mu_hat,
                           const Eigen::MatrixXd& propensities, std::vector<ArmIndex> eligible_arms);

// Lifts every entry of `raw` below `floor` to the floor and shrinks the
// excess of the others by a common factor so the result sums to one.
std::vector<double> apply_probability_floor(std::span<const double> raw, double floor);

// t^{-alpha} / K.
double floor_schedule(std::int64_t t, double alpha, int num_arms);

// Share of (ensemble policy, context) pairs that assign each arm.
std::vector<double> frequency_scores(std::span<const TreePolicy> ensemble,
                                     const Eigen::MatrixXd& contexts, int num_arms);

inline std::span<const double> row_span(const Eigen::MatrixXd& m, Eigen::Index i,
                                        std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) scratch[static_cast<std::size_t>(j)] = m(i, j);
  return scratch;
}

}  // namespace cbx
