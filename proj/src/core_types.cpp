#include "cbx/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cbx/errors.hpp"

namespace cbx {

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::IntegerOrdinal: return "integer-ordinal";
    case FeatureKind::Binary: return "binary";
    case FeatureKind::Real: return "real";
  }
  return "real";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "integer-ordinal") return FeatureKind::IntegerOrdinal;
  if (s == "binary") return FeatureKind::Binary;
  if (s == "real") return FeatureKind::Real;
  throw ValidationError("unknown feature kind '" + s + "'");
}

ContextSchema::ContextSchema(std::vector<FeatureSpec> features, double outcome_lo, double outcome_hi)
    : features_(std::move(features)), outcome_lo_(outcome_lo), outcome_hi_(outcome_hi) {
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (f.name.empty()) throw ValidationError("feature names must be non-empty");
    if (!seen.insert(f.name).second) throw ValidationError("duplicate feature '" + f.name + "'");
    if (!(f.lo <= f.hi)) throw ValidationError("feature '" + f.name + "' has an empty range");
    if (f.kind == FeatureKind::Binary && (f.lo != 0.0 || f.hi != 1.0))
      throw ValidationError("binary feature '" + f.name + "' must have range [0, 1]");
  }
  if (!(outcome_lo_ < outcome_hi_)) throw ValidationError("outcome range is empty");
}

std::optional<std::size_t> ContextSchema::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < features_.size(); ++j)
    if (features_[j].name == name) return j;
  return std::nullopt;
}

void ContextSchema::validate_context(std::span<const double> x) const {
  if (x.size() != features_.size())
    throw ValidationError("context has " + std::to_string(x.size()) + " values, schema expects " +
                          std::to_string(features_.size()));
  for (std::size_t j = 0; j < x.size(); ++j) {
    const auto& f = features_[j];
    double v = x[j];
    if (!std::isfinite(v)) throw ValidationError("feature '" + f.name + "' is not finite");
    if (v < f.lo || v > f.hi)
      throw ValidationError("feature '" + f.name + "' value " + std::to_string(v) + " outside [" +
                            std::to_string(f.lo) + ", " + std::to_string(f.hi) + "]");
    if (f.kind != FeatureKind::Real && v != std::floor(v))
      throw ValidationError("feature '" + f.name + "' must be an integer");
  }
}

void ContextSchema::validate_outcome(double y) const {
  if (!std::isfinite(y) || y < outcome_lo_ || y > outcome_hi_)
    throw ValidationError("outcome " + std::to_string(y) + " outside [" + std::to_string(outcome_lo_) +
                          ", " + std::to_string(outcome_hi_) + "]");
}

ArmSet::ArmSet(std::vector<std::string> aliases) : aliases_(std::move(aliases)) {
  std::set<std::string> seen;
  for (const auto& a : aliases_) {
    if (a.empty()) throw ValidationError("arm aliases must be non-empty");
    if (!seen.insert(a).second) throw ValidationError("duplicate arm alias '" + a + "'");
  }
}

std::optional<ArmIndex> ArmSet::index_of(const std::string& alias) const {
  auto it = std::find(aliases_.begin(), aliases_.end(), alias);
  if (it == aliases_.end()) return std::nullopt;
  return static_cast<ArmIndex>(it - aliases_.begin());
}

ArmIndex ArmSet::require(const std::string& alias) const {
  if (auto w = index_of(alias)) return *w;
  throw ValidationError("unknown arm '" + alias + "'");
}

ObservationLog::ObservationLog(ContextSchema schema, ArmSet arms)
    : schema_(std::move(schema)), arms_(std::move(arms)) {}

void ObservationLog::append(Observation obs) {
  const std::size_t row = rows_.size();
  const int k = arms_.size();
  try {
    schema_.validate_context(obs.x);
    schema_.validate_outcome(obs.y);
  } catch (const ValidationError& e) {
    throw RowError(row, e.what());
  }
  if (obs.arm < 0 || obs.arm >= k) throw RowError(row, "arm index out of range");
  if (static_cast<int>(obs.e.size()) != k) throw RowError(row, "propensity vector has wrong length");
  double sum = 0.0;
  for (double p : obs.e) {
    if (!std::isfinite(p) || p < 0.0) throw RowError(row, "propensities must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw RowError(row, "propensities do not sum to 1");
  if (!(obs.e[static_cast<std::size_t>(obs.arm)] > 0.0)) throw RowError(row, "realized arm has zero propensity");
  if (!rows_.empty()) {
    if (obs.t <= rows_.back().t) throw RowError(row, "period index must be strictly increasing");
    if (obs.batch < rows_.back().batch) throw RowError(row, "batch index must be non-decreasing");
  } else if (obs.t < 1) {
    throw RowError(row, "period index must be >= 1");
  }
  rows_.push_back(std::move(obs));
}

// May exceed size() while the learning phase is still being collected.
void ObservationLog::set_learning_rows(std::optional<std::size_t> n) { learning_rows_ = n; }

ObservationLog ObservationLog::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, rows_.size());
  begin = std::min(begin, end);
  ObservationLog out(schema_, arms_);
  out.rows_.assign(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                   rows_.begin() + static_cast<std::ptrdiff_t>(end));
  out.metadata_ = metadata_;
  return out;
}

ObservationLog ObservationLog::prefix(std::size_t n) const {
  auto out = slice(0, n);
  if (learning_rows_) out.learning_rows_ = std::min(*learning_rows_, out.size());
  return out;
}

ObservationLog ObservationLog::learning_phase() const {
  auto out = slice(0, learning_rows_.value_or(rows_.size()));
  out.learning_rows_ = out.size();
  return out;
}

ObservationLog ObservationLog::evaluation_phase() const {
  return slice(learning_rows_.value_or(rows_.size()), rows_.size());
}

Eigen::MatrixXd ObservationLog::contexts() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(schema_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i)
    for (std::size_t j = 0; j < schema_.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows_[i].x[j];
  return m;
}

std::vector<ArmIndex> ObservationLog::arm_column() const {
  std::vector<ArmIndex> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r.arm);
  return out;
}

Eigen::VectorXd ObservationLog::outcomes() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i) y(static_cast<Eigen::Index>(i)) = rows_[i].y;
  return y;
}

Eigen::MatrixXd ObservationLog::propensities() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), arms_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i)
    for (int w = 0; w < arms_.size(); ++w)
      m(static_cast<Eigen::Index>(i), w) = rows_[i].e[static_cast<std::size_t>(w)];
  return m;
}

TreePolicy TreePolicy::constant(ArmIndex arm) {
  TreePolicy p;
  p.nodes.push_back(Node{.arm = arm});
  return p;
}

ArmIndex TreePolicy::predict(std::span<const double> x) const {
  if (nodes.empty()) throw std::logic_error("empty tree policy");
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].arm;
}

int TreePolicy::depth() const {
  if (nodes.empty()) return 0;
  std::function<int(int)> rec = [&](int i) -> int {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(rec(n.left), rec(n.right));
  };
  return rec(0);
}

std::vector<ArmIndex> TreePolicy::leaf_arms() const {
  std::set<ArmIndex> arms;
  for (const auto& n : nodes)
    if (n.is_leaf()) arms.insert(n.arm);
  return {arms.begin(), arms.end()};
}

int AipwScoreTable::column_of(ArmIndex arm) const {
  auto it = std::find(eligible_arms.begin(), eligible_arms.end(), arm);
  if (it == eligible_arms.end())
    throw std::invalid_argument("arm " + std::to_string(arm) + " is not scored in this table");
  return static_cast<int>(it - eligible_arms.begin());
}

AipwScoreTable aipw_scores(std::span<const ArmIndex> arms, std::span<const double> outcomes,
                           const Eigen::MatrixXd& mu_hat, const Eigen::MatrixXd& propensities,
                           std::vector<ArmIndex> eligible_arms) {
  const auto n = static_cast<Eigen::Index>(arms.size());
  const auto k = static_cast<Eigen::Index>(eligible_arms.size());
  if (static_cast<Eigen::Index>(outcomes.size()) != n || mu_hat.rows() != n || propensities.rows() != n ||
      mu_hat.cols() != k || propensities.cols() != k)
    throw std::invalid_argument("aipw_scores: inconsistent input dimensions");

  AipwScoreTable table{std::move(eligible_arms), Eigen::MatrixXd(n, k)};
  for (Eigen::Index t = 0; t < n; ++t) {
    const double y = outcomes[static_cast<std::size_t>(t)];
    if (std::isnan(y)) throw RowError(static_cast<std::size_t>(t), "outcome is NaN");
    for (Eigen::Index j = 0; j < k; ++j) {
      const double mu = mu_hat(t, j);
      if (std::isnan(mu)) throw RowError(static_cast<std::size_t>(t), "mu_hat is NaN");
      double g = mu;
      if (table.eligible_arms[static_cast<std::size_t>(j)] == arms[static_cast<std::size_t>(t)]) {
        const double e = propensities(t, j);
        if (std::isnan(e) || !(e > 0.0))
          throw RowError(static_cast<std::size_t>(t), "non-positive propensity on the realized arm");
        g += (y - mu) / e;
      }
      table.scores(t, j) = g;
    }
  }
  return table;
}

AipwScoreTable aipw_scores(const ObservationLog& log, const Eigen::MatrixXd& mu_hat,
                           const Eigen::MatrixXd& propensities, std::vector<ArmIndex> eligible_arms) {
  auto arms = log.arm_column();
  std::vector<double> y;
  y.reserve(log.size());
  for (const auto& r : log.rows()) y.push_back(r.y);
  return aipw_scores(arms, y, mu_hat, propensities, std::move(eligible_arms));
}

std::vector<double> apply_probability_floor(std::span<const double> raw, double floor) {
  const std::size_t k = raw.size();
  if (k == 0) throw std::invalid_argument("apply_probability_floor: empty vector");
  if (!(floor >= 0.0)) throw std::invalid_argument("probability floor must be non-negative");
  if (floor * static_cast<double>(k) > 1.0 + 1e-12)
    throw std::invalid_argument("probability floor " + std::to_string(floor) + " exceeds 1/K");
  double sum = 0.0;
  for (double p : raw) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to 1");

  double excess = 0.0;
  for (double p : raw)
    if (p >= floor) excess += p - floor;
  const double slack = 1.0 - floor * static_cast<double>(k);
  std::vector<double> out(k, floor);
  if (excess <= 0.0) return out;  // every entry sits at the floor, so floor == 1/K
  const double c = std::max(slack, 0.0) / excess;
  for (std::size_t w = 0; w < k; ++w)
    if (raw[w] >= floor) out[w] = floor + c * (raw[w] - floor);
  return out;
}

double floor_schedule(std::int64_t t, double alpha, int num_arms) {
  if (t < 1) throw std::domain_error("floor_schedule: period must be >= 1");
  if (!(alpha > 0.0)) throw std::domain_error("floor_schedule: alpha must be positive");
  if (num_arms < 1) throw std::domain_error("floor_schedule: need at least one arm");
  return std::pow(static_cast<double>(t), -alpha) / static_cast<double>(num_arms);
}

std::vector<double> frequency_scores(std::span<const TreePolicy> ensemble, const Eigen::MatrixXd& contexts,
                                     int num_arms) {
  if (ensemble.empty()) throw std::invalid_argument("frequency_scores: empty ensemble");
  if (contexts.rows() == 0) throw std::invalid_argument("frequency_scores: no contexts");
  std::vector<double> counts(static_cast<std::size_t>(num_arms), 0.0);
  std::vector<double> x;
  for (Eigen::Index t = 0; t < contexts.rows(); ++t) {
    row_span(contexts, t, x);
    for (const auto& policy : ensemble) {
      ArmIndex w = policy.predict(x);
      if (w < 0 || w >= num_arms) throw std::invalid_argument("ensemble policy assigns an unknown arm");
      counts[static_cast<std::size_t>(w)] += 1.0;
    }
  }
  const double total = static_cast<double>(ensemble.size()) * static_cast<double>(contexts.rows());
  for (double& c : counts) c /= total;
  return counts;
}

}  // namespace cbx
