#include "cbx/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "cbx/csv.hpp"
#include "cbx/errors.hpp"
#include "cbx/linear_models.hpp"

namespace cbx {

void PipelineConfig::validate() const {
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
  if (subset_size < 1) throw ValidationError("subset_size must be >= 1");
  if (depths.empty()) throw ValidationError("depths must be non-empty");
  for (int d : depths)
    if (d < 0 || d > 3) throw ValidationError("depths must lie in 0..3");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must be in (0, 1)");
  if (max_thresholds < 2) throw ValidationError("max_thresholds must be >= 2");
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  return {{"top_k", c.top_k},
          {"subset_size", c.subset_size},
          {"depths", c.depths},
          {"train_fraction", c.train_fraction},
          {"max_thresholds", c.max_thresholds},
          {"frequency_contexts", c.frequency_contexts == FrequencyContexts::LastBatch ? "last-batch" : "learning-phase"}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("pipeline config must be a JSON object");
  PipelineConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "top_k") c.top_k = v.get<int>();
      else if (k == "subset_size") c.subset_size = v.get<int>();
      else if (k == "depths") c.depths = v.get<std::vector<int>>();
      else if (k == "train_fraction") c.train_fraction = v.get<double>();
      else if (k == "max_thresholds") c.max_thresholds = v.get<int>();
      else if (k == "threads") c.threads = v.get<int>();
      else if (k == "frequency_contexts") {
        const auto s = v.get<std::string>();
        if (s == "learning-phase") c.frequency_contexts = FrequencyContexts::LearningPhase;
        else if (s == "last-batch") c.frequency_contexts = FrequencyContexts::LastBatch;
        else throw ValidationError("frequency_contexts must be 'learning-phase' or 'last-batch'");
      } else {
        throw ValidationError("unknown pipeline config key '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("pipeline config key '" + k + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::vector<ArmIndex> select_top_arms(const std::vector<double>& scores, int k) {
  const int K = static_cast<int>(scores.size());
  if (k > K) throw ValidationError("cannot select " + std::to_string(k) + " of " + std::to_string(K) + " arms");
  std::vector<ArmIndex> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ArmIndex a, ArmIndex b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<TreePolicy> last_batch_ensemble(const ObservationLog& learning, const BanditConfig& config) {
  if (learning.empty()) throw ValidationError("learning log is empty");
  const int last = learning.last_batch();
  std::size_t start = learning.size();
  while (start > 0 && learning[start - 1].batch == last) --start;
  if (start == 0) return fit_bagging_ensemble(learning, config, last + 1);
  return fit_bagging_ensemble(learning.prefix(start), config, last);
}

PipelineResult run_learning_pipeline(const ObservationLog& learning, const std::vector<TreePolicy>& ensemble,
                                     const PipelineConfig& config) {
  config.validate();
  if (learning.empty()) throw ValidationError("learning log is empty");
  const int K = learning.arms().size();
  if (config.top_k > K) throw ValidationError("top_k exceeds the number of arms");

  PipelineResult r;
  const Eigen::MatrixXd all_contexts = learning.contexts();
  if (ensemble.empty()) {
    // no ensemble, no pruning
    for (int w = 0; w < K; ++w) r.selected.push_back(w);
  } else if (config.frequency_contexts == FrequencyContexts::LastBatch) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < learning.size(); ++i)
      if (learning[i].batch == learning.last_batch()) rows.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), all_contexts.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = all_contexts.row(rows[k]);
    r.frequency = frequency_scores(ensemble, sub, K);
  } else {
    r.frequency = frequency_scores(ensemble, all_contexts, K);
  }
  if (!ensemble.empty()) r.selected = select_top_arms(r.frequency, config.top_k);

  std::vector<int> column_of(static_cast<std::size_t>(K), -1);
  for (std::size_t j = 0; j < r.selected.size(); ++j) column_of[static_cast<std::size_t>(r.selected[j])] = static_cast<int>(j);
  for (std::size_t i = 0; i < learning.size(); ++i)
    if (column_of[static_cast<std::size_t>(learning[i].arm)] >= 0) r.retained.push_back(i);
  const auto k = static_cast<Eigen::Index>(r.selected.size());
  const auto n = static_cast<Eigen::Index>(r.retained.size());

  std::vector<int> counts(r.selected.size(), 0);
  Eigen::MatrixXd X(n, all_contexts.cols());
  Eigen::MatrixXd e(n, k);
  Eigen::VectorXd y(n);
  std::vector<ArmIndex> w(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& obs = learning[r.retained[static_cast<std::size_t>(i)]];
    X.row(i) = all_contexts.row(static_cast<Eigen::Index>(r.retained[static_cast<std::size_t>(i)]));
    double total = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) total += obs.e[static_cast<std::size_t>(r.selected[static_cast<std::size_t>(j)])];
    for (Eigen::Index j = 0; j < k; ++j) e(i, j) = obs.e[static_cast<std::size_t>(r.selected[static_cast<std::size_t>(j)])] / total;
    y(i) = obs.y;
    w[static_cast<std::size_t>(i)] = column_of[static_cast<std::size_t>(obs.arm)];
    ++counts[static_cast<std::size_t>(w[static_cast<std::size_t>(i)])];
  }
  for (std::size_t j = 0; j < counts.size(); ++j)
    if (counts[j] == 0)
      throw ValidationError("selected arm '" + learning.arms().alias(r.selected[j]) + "' has no retained observations");

  // Cross-fit and score in the selected-arm coordinates, then relabel.
  const CrossFitMuHat mu = fit_crossfit_mu(X, w, y, static_cast<int>(k), {.subset_size = config.subset_size, .ridge_lambda = {}});
  std::vector<ArmIndex> local(static_cast<std::size_t>(k));
  std::iota(local.begin(), local.end(), 0);
  AipwScoreTable local_table =
      aipw_scores(w, std::span<const double>(y.data(), static_cast<std::size_t>(n)), mu.predictions(), e, local);
  r.scores.eligible_arms = r.selected;
  r.scores.scores = std::move(local_table.scores);

  r.depth = select_depth_by_cv(r.scores, X, config.depths, config.train_fraction, config.max_thresholds, config.threads);
  r.contextual = r.depth.policy;
  r.mean_scores = r.scores.scores.colwise().mean().transpose();
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < k; ++j)
    if (r.mean_scores(j) > r.mean_scores(best)) best = j;
  r.fixed = FixedPolicy{r.selected[static_cast<std::size_t>(best)]};
  return r;
}

nlohmann::json pipeline_report(const PipelineResult& r, const ContextSchema& schema, const ArmSet& arms,
                               const PipelineConfig& config) {
  nlohmann::json freq = nlohmann::json::object();
  for (std::size_t w = 0; w < r.frequency.size(); ++w) freq[arms.alias(static_cast<ArmIndex>(w))] = r.frequency[w];
  nlohmann::json selected = nlohmann::json::array();
  nlohmann::json means = nlohmann::json::object();
  for (std::size_t j = 0; j < r.selected.size(); ++j) {
    selected.push_back(arms.alias(r.selected[j]));
    means[arms.alias(r.selected[j])] = r.mean_scores(static_cast<Eigen::Index>(j));
  }
  nlohmann::json heldout = nlohmann::json::array();
  std::vector<int> depths = config.depths;
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  for (std::size_t i = 0; i < depths.size() && i < r.depth.heldout_values.size(); ++i)
    heldout.push_back({{"depth", depths[i]}, {"value", r.depth.heldout_values[i]}});
  return {{"format", "cbx-policy-report"},
          {"version", 1},
          {"frequency_scores", freq},
          {"selected_arms", selected},
          {"depth", r.depth.depth},
          {"heldout_values", heldout},
          {"contextual_policy", tree_to_json(r.contextual, schema, arms)},
          {"contextual_policy_text", render_tree(r.contextual, schema, arms)},
          {"fixed_policy", arms.alias(r.fixed.arm)},
          {"mean_aipw", means},
          {"retained_rows", r.retained.size()},
          {"config", pipeline_config_to_json(config)}};
}

PolicyReport policy_report_from_json(const nlohmann::json& j, const ContextSchema& schema, const ArmSet& arms) {
  try {
    PolicyReport p;
    p.contextual = tree_from_json(j.at("contextual_policy"), schema, arms);
    p.fixed = FixedPolicy{arms.require(j.at("fixed_policy").get<std::string>())};
    for (const auto& a : j.at("selected_arms")) p.selected.push_back(arms.require(a.get<std::string>()));
    p.frequency.assign(static_cast<std::size_t>(arms.size()), 0.0);
    if (j.contains("frequency_scores"))
      for (auto it = j.at("frequency_scores").begin(); it != j.at("frequency_scores").end(); ++it)
        p.frequency[static_cast<std::size_t>(arms.require(it.key()))] = it.value().get<double>();
    p.depth = j.value("depth", p.contextual.depth());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed policy report: ") + e.what());
  }
}

bool Region::contains(std::span<const double> x) const {
  for (const auto& leaf : leaves) {
    bool in = true;
    for (const auto& c : leaf) {
      const double v = x[static_cast<std::size_t>(c.feature)];
      if (c.at_most ? !(v <= c.threshold) : !(v > c.threshold)) {
        in = false;
        break;
      }
    }
    if (in) return true;
  }
  return false;
}

std::string Region::describe(const ContextSchema& schema) const {
  if (leaves.empty()) return "(empty)";
  std::string out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    if (l) out += " or ";
    if (leaves[l].empty()) {
      out += "(all)";
      continue;
    }
    std::string term;
    for (std::size_t c = 0; c < leaves[l].size(); ++c) {
      const auto& cond = leaves[l][c];
      if (c) term += " and ";
      term += schema.feature(static_cast<std::size_t>(cond.feature)).name + (cond.at_most ? " <= " : " > ") +
              csv::format_double(cond.threshold);
    }
    out += leaves.size() > 1 ? "(" + term + ")" : term;
  }
  return out;
}

std::vector<Region> region_partition(const TreePolicy& policy, int num_arms) {
  std::vector<Region> regions(static_cast<std::size_t>(num_arms));
  for (int w = 0; w < num_arms; ++w) regions[static_cast<std::size_t>(w)].arm = w;
  std::vector<Region::Condition> path;
  auto rec = [&](auto&& self, int i) -> void {
    const auto& n = policy.nodes.at(static_cast<std::size_t>(i));
    if (n.is_leaf()) {
      if (n.arm < 0 || n.arm >= num_arms) throw ValidationError("policy leaf arm out of range");
      regions[static_cast<std::size_t>(n.arm)].leaves.push_back(path);
      return;
    }
    path.push_back({n.feature, n.threshold, true});
    self(self, n.left);
    path.back().at_most = false;
    self(self, n.right);
    path.pop_back();
  };
  rec(rec, 0);
  return regions;
}

}  // namespace cbx
