#include "cbx/policy_tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cbx/csv.hpp"
#include "cbx/errors.hpp"
#include "cbx/parallel.hpp"

namespace cbx {

std::vector<double> candidate_thresholds(const Eigen::VectorXd& values, int max_thresholds) {
  if (max_thresholds < 1) throw std::invalid_argument("max_thresholds must be >= 1");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> cuts;
  if (distinct.size() < 2) return cuts;
  if (distinct.size() - 1 <= static_cast<std::size_t>(max_thresholds)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    return cuts;
  }
  const std::size_t n = sorted.size();
  for (int q = 1; q <= max_thresholds; ++q) {
    const std::size_t idx = (static_cast<std::size_t>(q) * n) / static_cast<std::size_t>(max_thresholds + 1);
    const double v = sorted[std::min(idx, n - 1)];
    auto next = std::upper_bound(distinct.begin(), distinct.end(), v);
    if (next == distinct.end()) continue;
    cuts.push_back(0.5 * (v + *next));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  return cuts;
}

namespace {

using Node = TreePolicy::Node;

struct Subtree {
  double value = -std::numeric_limits<double>::infinity();
  std::vector<Node> nodes;
};

Subtree make_split(int feature, double threshold, const Subtree& left, const Subtree& right) {
  Subtree out;
  out.value = left.value + right.value;
  const int nl = static_cast<int>(left.nodes.size());
  out.nodes.reserve(1 + left.nodes.size() + right.nodes.size());
  out.nodes.push_back(Node{.feature = feature, .threshold = threshold, .left = 1, .right = 1 + nl});
  auto append = [&](const Subtree& sub, int offset) {
    for (Node n : sub.nodes) {
      if (!n.is_leaf()) {
        n.left += offset;
        n.right += offset;
      }
      out.nodes.push_back(n);
    }
  };
  append(left, 1);
  append(right, 1 + nl);
  return out;
}

class Searcher {
 public:
  Searcher(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& contexts, int max_thresholds)
      : scores_(scores), k_(static_cast<int>(scores.cols())), p_(static_cast<int>(contexts.cols())) {
    thresholds_.resize(static_cast<std::size_t>(p_));
    bins_.resize(static_cast<std::size_t>(p_));
    for (int j = 0; j < p_; ++j) {
      thresholds_[j] = candidate_thresholds(contexts.col(j), max_thresholds);
      auto& b = bins_[j];
      b.resize(static_cast<std::size_t>(contexts.rows()));
      for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const double v = contexts(i, j);
        // x <= thresholds[q]  <=>  bin <= q
        b[static_cast<std::size_t>(i)] = static_cast<int>(
            std::lower_bound(thresholds_[j].begin(), thresholds_[j].end(), v) - thresholds_[j].begin());
      }
    }
  }

  Subtree solve(const std::vector<int>& rows, int depth, int threads) const {
    Subtree best = leaf(rows);
    if (depth == 0 || rows.size() < 2) return best;
    const double eps = tolerance(rows);
    std::vector<Subtree> per_feature(static_cast<std::size_t>(p_));
    auto body = [&](std::size_t j) {
      per_feature[j] = depth == 1 ? best_stump(rows, static_cast<int>(j), eps)
                                  : best_split(rows, static_cast<int>(j), depth, eps);
    };
    parallel_for(static_cast<std::size_t>(p_), threads, body);
    for (auto& cand : per_feature)
      if (!cand.nodes.empty() && cand.value > best.value + eps) best = std::move(cand);
    return best;
  }

 private:
  double tolerance(const std::vector<int>& rows) const {
    double a = 0.0;
    for (int r : rows) a += scores_.row(r).cwiseAbs().sum();
    return 1e-11 * a;
  }

  Subtree leaf(const std::vector<int>& rows) const {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(k_);
    for (int r : rows) total += scores_.row(r).transpose();
    int arm = 0;
    for (int c = 1; c < k_; ++c)
      if (total(c) > total(arm)) arm = c;
    Subtree s;
    s.value = k_ == 0 ? 0.0 : total(arm);
    s.nodes.push_back(Node{.arm = arm});
    return s;
  }

  static std::pair<int, double> best_column(const double* v, int k) {
    int arm = 0;
    for (int c = 1; c < k; ++c)
      if (v[c] > v[arm]) arm = c;
    return {arm, v[arm]};
  }

  // Depth-1 split on feature j using per-bin score totals.
  Subtree best_stump(const std::vector<int>& rows, int j, double eps) const {
    const auto& cuts = thresholds_[static_cast<std::size_t>(j)];
    const auto& bins = bins_[static_cast<std::size_t>(j)];
    const int nb = static_cast<int>(cuts.size()) + 1;
    Subtree best;
    if (nb < 2) return best;
    std::vector<double> sums(static_cast<std::size_t>(nb * k_), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(nb), 0);
    for (int r : rows) {
      const int b = bins[static_cast<std::size_t>(r)];
      ++counts[static_cast<std::size_t>(b)];
      double* s = &sums[static_cast<std::size_t>(b * k_)];
      for (int c = 0; c < k_; ++c) s[c] += scores_(r, c);
    }
    std::vector<double> suffix(static_cast<std::size_t>((nb + 1) * k_), 0.0);
    std::vector<int> suffix_count(static_cast<std::size_t>(nb + 1), 0);
    for (int b = nb - 1; b >= 0; --b) {
      suffix_count[b] = suffix_count[b + 1] + counts[b];
      for (int c = 0; c < k_; ++c)
        suffix[static_cast<std::size_t>(b * k_ + c)] =
            suffix[static_cast<std::size_t>((b + 1) * k_ + c)] + sums[static_cast<std::size_t>(b * k_ + c)];
    }
    std::vector<double> prefix(static_cast<std::size_t>(k_), 0.0);
    int prefix_count = 0;
    const int n = static_cast<int>(rows.size());
    for (int q = 0; q + 1 < nb; ++q) {
      for (int c = 0; c < k_; ++c) prefix[c] += sums[static_cast<std::size_t>(q * k_ + c)];
      prefix_count += counts[static_cast<std::size_t>(q)];
      if (prefix_count == 0 || prefix_count == n) continue;
      auto [la, lv] = best_column(prefix.data(), k_);
      auto [ra, rv] = best_column(&suffix[static_cast<std::size_t>((q + 1) * k_)], k_);
      const double value = lv + rv;
      if (best.nodes.empty() || value > best.value + eps) {
        best.value = value;
        best.nodes = {Node{.feature = j, .threshold = cuts[static_cast<std::size_t>(q)], .left = 1, .right = 2},
                      Node{.arm = la}, Node{.arm = ra}};
      }
    }
    return best;
  }

  Subtree best_split(const std::vector<int>& rows, int j, int depth, double eps) const {
    const auto& cuts = thresholds_[static_cast<std::size_t>(j)];
    const auto& bins = bins_[static_cast<std::size_t>(j)];
    Subtree best;
    std::vector<int> left, right;
    left.reserve(rows.size());
    right.reserve(rows.size());
    for (std::size_t q = 0; q < cuts.size(); ++q) {
      left.clear();
      right.clear();
      for (int r : rows) (bins[static_cast<std::size_t>(r)] <= static_cast<int>(q) ? left : right).push_back(r);
      if (left.empty() || right.empty()) continue;
      Subtree l = solve(left, depth - 1, 1);
      Subtree r = solve(right, depth - 1, 1);
      const double value = l.value + r.value;
      if (best.nodes.empty() || value > best.value + eps) best = make_split(j, cuts[q], l, r);
    }
    return best;
  }

  const Eigen::MatrixXd& scores_;
  int k_;
  int p_;
  std::vector<std::vector<double>> thresholds_;
  std::vector<std::vector<int>> bins_;
};

// Lexicographic order on (context, scores) so the result does not depend on
// the order rows were supplied in.
std::vector<int> canonical_order(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& contexts) {
  std::vector<int> order(static_cast<std::size_t>(contexts.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index j = 0; j < contexts.cols(); ++j)
      if (contexts(a, j) != contexts(b, j)) return contexts(a, j) < contexts(b, j);
    for (Eigen::Index c = 0; c < scores.cols(); ++c)
      if (scores(a, c) != scores(b, c)) return scores(a, c) < scores(b, c);
    return false;
  });
  return order;
}

}  // namespace

TreeSolution solve_tree(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& contexts,
                        const TreeSearchOptions& options) {
  if (scores.rows() == 0) throw std::invalid_argument("solve_tree: empty score table");
  if (scores.cols() == 0) throw std::invalid_argument("solve_tree: no arms to assign");
  if (contexts.rows() != scores.rows()) throw std::invalid_argument("solve_tree: contexts/scores row mismatch");
  if (options.depth < 0 || options.depth > 3) throw std::invalid_argument("solve_tree: depth must be in 0..3");
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores.data()[i])) throw std::invalid_argument("solve_tree: non-finite score");

  const auto order = canonical_order(scores, contexts);
  Eigen::MatrixXd s(scores.rows(), scores.cols());
  Eigen::MatrixXd x(contexts.rows(), contexts.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    s.row(static_cast<Eigen::Index>(i)) = scores.row(order[i]);
    x.row(static_cast<Eigen::Index>(i)) = contexts.row(order[i]);
  }
  Searcher searcher(s, x, options.max_thresholds);
  std::vector<int> rows(order.size());
  std::iota(rows.begin(), rows.end(), 0);
  Subtree best = searcher.solve(rows, options.depth, options.threads);
  return TreeSolution{TreePolicy{std::move(best.nodes)}, best.value};
}

TreeSolution solve_tree(const AipwScoreTable& table, const Eigen::MatrixXd& contexts,
                        const TreeSearchOptions& options) {
  TreeSolution sol = solve_tree(table.scores, contexts, options);
  for (auto& n : sol.policy.nodes)
    if (n.is_leaf()) n.arm = table.eligible_arms.at(static_cast<std::size_t>(n.arm));
  return sol;
}

double evaluate_policy_on_scores(const TreePolicy& policy, const AipwScoreTable& table,
                                 const Eigen::MatrixXd& contexts) {
  if (table.rows() == 0) throw std::invalid_argument("evaluate_policy_on_scores: empty score table");
  std::vector<double> x;
  double total = 0.0;
  for (Eigen::Index t = 0; t < table.scores.rows(); ++t) {
    const int c = table.column_of(policy.predict(row_span(contexts, t, x)));
    total += table.scores(t, c);
  }
  return total / static_cast<double>(table.rows());
}

DepthSelection select_depth_by_cv(const AipwScoreTable& table, const Eigen::MatrixXd& contexts,
                                  const std::vector<int>& depths, double train_fraction, int max_thresholds,
                                  int threads) {
  if (depths.empty()) throw std::invalid_argument("select_depth_by_cv: no candidate depths");
  const auto n = static_cast<Eigen::Index>(table.rows());
  const auto n_train = static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(n)));
  if (n_train <= 0) throw std::invalid_argument("select_depth_by_cv: training split is empty");
  if (n_train >= n) throw std::invalid_argument("select_depth_by_cv: test split is empty");

  std::vector<int> sorted = depths;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  AipwScoreTable train{table.eligible_arms, table.scores.topRows(n_train)};
  AipwScoreTable test{table.eligible_arms, table.scores.bottomRows(n - n_train)};
  const Eigen::MatrixXd x_train = contexts.topRows(n_train);
  const Eigen::MatrixXd x_test = contexts.bottomRows(n - n_train);

  DepthSelection out;
  double best = -std::numeric_limits<double>::infinity();
  for (int d : sorted) {
    auto fit = solve_tree(train, x_train, TreeSearchOptions{d, max_thresholds, threads});
    const double v = evaluate_policy_on_scores(fit.policy, test, x_test);
    out.heldout_values.push_back(v);
    if (v > best) {
      best = v;
      out.depth = d;
    }
  }
  out.policy = solve_tree(table, contexts, TreeSearchOptions{out.depth, max_thresholds, threads}).policy;
  return out;
}

nlohmann::json tree_to_json(const TreePolicy& policy, const ContextSchema& schema, const ArmSet& arms) {
  std::function<nlohmann::json(int)> rec = [&](int i) -> nlohmann::json {
    const auto& n = policy.nodes.at(static_cast<std::size_t>(i));
    if (n.is_leaf()) return {{"arm", arms.alias(n.arm)}};
    return {{"feature", schema.feature(static_cast<std::size_t>(n.feature)).name},
            {"threshold", n.threshold},
            {"left", rec(n.left)},
            {"right", rec(n.right)}};
  };
  return rec(0);
}

TreePolicy tree_from_json(const nlohmann::json& j, const ContextSchema& schema, const ArmSet& arms) {
  TreePolicy policy;
  std::function<int(const nlohmann::json&)> rec = [&](const nlohmann::json& node) -> int {
    const int idx = static_cast<int>(policy.nodes.size());
    policy.nodes.emplace_back();
    if (node.contains("arm")) {
      policy.nodes[static_cast<std::size_t>(idx)].arm = arms.require(node.at("arm").get<std::string>());
      return idx;
    }
    const auto name = node.at("feature").get<std::string>();
    auto f = schema.index_of(name);
    if (!f) throw ValidationError("tree references unknown feature '" + name + "'");
    const double thr = node.at("threshold").get<double>();
    const int l = rec(node.at("left"));
    const int r = rec(node.at("right"));
    auto& n = policy.nodes[static_cast<std::size_t>(idx)];
    n.feature = static_cast<int>(*f);
    n.threshold = thr;
    n.left = l;
    n.right = r;
    return idx;
  };
  rec(j);
  return policy;
}

std::string render_tree(const TreePolicy& policy, const ContextSchema& schema, const ArmSet& arms) {
  std::ostringstream out;
  std::function<void(int, int)> rec = [&](int i, int indent) {
    const auto& n = policy.nodes.at(static_cast<std::size_t>(i));
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    if (n.is_leaf()) {
      out << pad << "* " << arms.alias(n.arm) << '\n';
      return;
    }
    const auto& name = schema.feature(static_cast<std::size_t>(n.feature)).name;
    const auto thr = csv::format_double(n.threshold);
    out << pad << name << " <= " << thr << '\n';
    rec(n.left, indent + 1);
    out << pad << name << " > " << thr << '\n';
    rec(n.right, indent + 1);
  };
  rec(0, 0);
  return out.str();
}

}  // namespace cbx
