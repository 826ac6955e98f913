#include "cbx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cbx/errors.hpp"

namespace cbx {

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const Eigen::VectorXd& v) {
  MeanSe r;
  const auto n = v.size();
  if (n == 0) return r;
  r.mean = v.mean();
  if (n > 1) r.se = std::sqrt((v.array() - r.mean).square().sum() / static_cast<double>(n - 1) / static_cast<double>(n));
  return r;
}

}  // namespace

Eigen::VectorXd evaluation_mixture_propensity(std::span<const double> x, const TreePolicy& contextual,
                                              const FixedPolicy& fixed, double epsilon, int num_arms) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must be in (0, 1]");
  Eigen::VectorXd e = Eigen::VectorXd::Constant(num_arms, epsilon / num_arms);
  e(contextual.predict(x)) += (1.0 - epsilon) / 2.0;
  e(fixed.arm) += (1.0 - epsilon) / 2.0;
  return e;
}

Eigen::MatrixXd evaluation_mixture(const Eigen::MatrixXd& contexts, const TreePolicy& contextual,
                                   const FixedPolicy& fixed, double epsilon, int num_arms) {
  Eigen::MatrixXd e(contexts.rows(), num_arms);
  std::vector<double> scratch;
  for (Eigen::Index i = 0; i < contexts.rows(); ++i)
    e.row(i) = evaluation_mixture_propensity(row_span(contexts, i, scratch), contextual, fixed, epsilon, num_arms).transpose();
  return e;
}

Eigen::VectorXd ipw_policy_scores(const ObservationLog& log, const TreePolicy& policy) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(log.size()));
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& obs = log[i];
    const ArmIndex a = policy.predict(obs.x);
    const double e = obs.e.at(static_cast<std::size_t>(a));
    if (!(e > 0.0)) throw RowError(i, "zero propensity on the policy's arm");
    s(static_cast<Eigen::Index>(i)) = obs.arm == a ? obs.y / e : 0.0;
  }
  return s;
}

ValueEstimate estimate_policy_value(const ObservationLog& log, const TreePolicy& policy) {
  const Eigen::VectorXd s = ipw_policy_scores(log, policy);
  const MeanSe m = mean_se(s);
  return {m.mean, m.se, log.size()};
}

double one_sided_p_value(double diff, double se) {
  if (se > 0.0) return 0.5 * std::erfc(diff / se / std::sqrt(2.0));
  if (diff > 0.0) return 0.0;
  if (diff < 0.0) return 1.0;
  return 0.5;
}

DifferenceTest test_value_difference(const ObservationLog& log, const TreePolicy& a, const TreePolicy& b,
                                     const std::vector<std::size_t>& rows) {
  const Eigen::VectorXd sa = ipw_policy_scores(log, a);
  const Eigen::VectorXd sb = ipw_policy_scores(log, b);
  Eigen::VectorXd d(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    d(static_cast<Eigen::Index>(k)) = sa(static_cast<Eigen::Index>(rows[k])) - sb(static_cast<Eigen::Index>(rows[k]));
  const MeanSe m = mean_se(d);
  return {m.mean, m.se, one_sided_p_value(m.mean, m.se), rows.size()};
}

DifferenceTest test_value_difference(const ObservationLog& log, const TreePolicy& a, const TreePolicy& b) {
  std::vector<std::size_t> rows(log.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return test_value_difference(log, a, b, rows);
}

std::vector<RegionContrast> contrast_per_region(const ObservationLog& log, const TreePolicy& contextual,
                                                const FixedPolicy& fixed, const std::vector<Region>& regions) {
  std::vector<RegionContrast> out;
  const TreePolicy fixed_tree = fixed.as_tree();
  for (const auto& region : regions) {
    RegionContrast c;
    c.arm = region.arm;
    c.description = region.describe(log.schema());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < log.size(); ++i)
      if (region.contains(log[i].x)) rows.push_back(i);
    c.n = rows.size();
    if (rows.size() >= 2) c.test = test_value_difference(log, contextual, fixed_tree, rows);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Subgroup> default_subgroups(const ContextSchema& schema) {
  std::vector<Subgroup> g;
  auto add_split = [&](const std::string& feature, const std::string& in_name, const std::string& out_name,
                       std::function<bool(double)> test) {
    auto idx = schema.index_of(feature);
    if (!idx) return;
    const std::size_t j = *idx;
    g.push_back({in_name, [j, test](std::span<const double> x) { return test(x[j]); }});
    g.push_back({out_name, [j, test](std::span<const double> x) { return !test(x[j]); }});
  };
  add_split("political_leaning", "liberal", "conservative", [](double v) { return v < 4; });
  add_split("age", "age_below_30", "age_30_plus", [](double v) { return v < 30; });
  add_split("views_abortion", "pro_choice", "anti_choice", [](double v) { return v <= 3; });
  return g;
}

std::vector<SubgroupCell> subgroup_means(const ObservationLog& log, const std::vector<Subgroup>& subgroups) {
  const int K = log.arms().size();
  std::vector<SubgroupCell> out;
  for (const auto& g : subgroups) {
    std::vector<std::vector<double>> ys(static_cast<std::size_t>(K));
    for (const auto& obs : log.rows())
      if (g.contains(obs.x)) ys[static_cast<std::size_t>(obs.arm)].push_back(obs.y);
    for (int w = 0; w < K; ++w) {
      const auto& v = ys[static_cast<std::size_t>(w)];
      SubgroupCell c;
      c.subgroup = g.name;
      c.arm = w;
      c.n = v.size();
      if (!v.empty()) {
        const MeanSe m = mean_se(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        c.mean = m.mean;
        if (v.size() >= 2) c.se = m.se;
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<DescriptiveRow> batch_descriptives(const ObservationLog& log, const TreePolicy& contextual,
                                               const std::vector<Subgroup>& subgroups, const PropensityReplay& replay) {
  const int K = log.arms().size();
  std::map<int, std::vector<std::size_t>> by_batch;
  for (std::size_t i = 0; i < log.size(); ++i) by_batch[log[i].batch].push_back(i);

  std::vector<Subgroup> groups;
  groups.push_back({"all", [](std::span<const double>) { return true; }});
  groups.insert(groups.end(), subgroups.begin(), subgroups.end());

  std::vector<DescriptiveRow> out;
  for (const auto& [batch, rows] : by_batch) {
    for (const auto& g : groups) {
      std::vector<double> y;
      for (std::size_t i : rows)
        if (g.contains(log[i].x)) y.push_back(log[i].y);
      DescriptiveRow r{"mean_reward", batch, g.name, "", 0.0, std::nullopt, y.size()};
      if (!y.empty()) {
        const MeanSe m = mean_se(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
        r.value = m.mean;
        if (y.size() >= 2) r.se = m.se;
      } else {
        r.value = std::nan("");
      }
      out.push_back(r);
    }
    for (int w = 0; w < K; ++w) {
      double s = 0.0;
      for (std::size_t i : rows) s += log[i].e[static_cast<std::size_t>(w)];
      out.push_back({"mean_propensity", batch, "all", log.arms().alias(w), s / static_cast<double>(rows.size()),
                     std::nullopt, rows.size()});
    }
    double rec = 0.0;
    for (std::size_t i : rows) rec += log[i].e[static_cast<std::size_t>(contextual.predict(log[i].x))];
    out.push_back({"recommended_arm_probability", batch, "all", "", rec / static_cast<double>(rows.size()),
                   std::nullopt, rows.size()});
  }

  if (replay && !log.empty()) {
    const auto p = static_cast<Eigen::Index>(log.schema().size());
    std::vector<std::string> names;
    std::vector<std::vector<double>> medians;
    for (const auto& g : subgroups) {
      std::vector<std::vector<double>> cols(static_cast<std::size_t>(p));
      for (const auto& obs : log.rows())
        if (g.contains(obs.x))
          for (Eigen::Index j = 0; j < p; ++j) cols[static_cast<std::size_t>(j)].push_back(obs.x[static_cast<std::size_t>(j)]);
      if (cols.empty() || cols[0].empty()) continue;
      std::vector<double> med(static_cast<std::size_t>(p));
      for (std::size_t j = 0; j < med.size(); ++j) {
        auto& c = cols[j];
        // lower median keeps the value on the feature's own grid
        std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>((c.size() - 1) / 2), c.end());
        med[j] = c[(c.size() - 1) / 2];
      }
      names.push_back(g.name);
      medians.push_back(std::move(med));
    }
    if (!medians.empty()) {
      Eigen::MatrixXd ctx(static_cast<Eigen::Index>(medians.size()), p);
      for (std::size_t g = 0; g < medians.size(); ++g)
        for (Eigen::Index j = 0; j < p; ++j) ctx(static_cast<Eigen::Index>(g), j) = medians[g][static_cast<std::size_t>(j)];
      for (const auto& [batch, rows] : by_batch) {
        const Eigen::MatrixXd e = replay(log.prefix(rows.front()), ctx, batch);
        for (std::size_t g = 0; g < names.size(); ++g)
          for (int w = 0; w < K; ++w)
            out.push_back({"median_context_propensity", batch, names[g], log.arms().alias(w),
                           e(static_cast<Eigen::Index>(g), w), std::nullopt, 1});
      }
    }
  }
  return out;
}

double power_across_sims(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) throw std::invalid_argument("power_across_sims: no replicates");
  std::size_t hits = 0;
  for (double p : p_values) hits += p < alpha ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(p_values.size());
}

}  // namespace cbx
