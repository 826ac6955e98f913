#include <doctest.h>

#include <cmath>

#include "cbx/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cbx;

namespace {

TreePolicy stump(double thr, ArmIndex left, ArmIndex right) {
  TreePolicy t;
  t.nodes = {{0, thr, 1, 2, 0}, {-1, 0, -1, -1, left}, {-1, 0, -1, -1, right}};
  return t;
}

// Evaluation-phase log under the mixture, with Gaussian-free bounded noise.
template <class Mean>
ObservationLog mixture_log(int n, int K, const TreePolicy& pc, const FixedPolicy& pn, double eps, Mean mean, Rng& rng,
                           double noise = 2.0) {
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(K));
  for (int t = 0; t < n; ++t) {
    std::vector<double> x{uniform01(rng), uniform01(rng)};
    const Eigen::VectorXd e = evaluation_mixture_propensity(x, pc, pn, eps, K);
    std::vector<double> ev(e.data(), e.data() + K);
    const ArmIndex w = sample_arm(ev, rng);
    const double y = std::clamp(mean(x, w) + noise * (2 * uniform01(rng) - 1), -10.0, 10.0);
    log.append({t + 1, x, w, y, ev, 0});
  }
  return log;
}

double arm_mean(const std::vector<double>& x, ArmIndex w) { return w == 0 ? 1.0 : (w == 1 ? 2.0 * x[0] : 0.5); }

}  // namespace

TEST_CASE("evaluation mixture arithmetic") {
  const std::vector<double> x{0.2, 0.4};
  auto e = evaluation_mixture_propensity(x, TreePolicy::constant(1), FixedPolicy{4}, 0.3, 8);
  CHECK(e(1) == doctest::Approx(0.3875));
  CHECK(e(4) == doctest::Approx(0.3875));
  CHECK(e(0) == doctest::Approx(0.0375));
  CHECK(e.sum() == doctest::Approx(1.0));
  e = evaluation_mixture_propensity(x, TreePolicy::constant(4), FixedPolicy{4}, 0.3, 8);
  CHECK(e(4) == doctest::Approx(0.7375));
  e = evaluation_mixture_propensity(x, TreePolicy::constant(4), FixedPolicy{2}, 1.0, 8);
  CHECK((e.array() == 0.125).all());
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const double eps = 0.01 + 0.99 * uniform01(rng);
    const std::vector<double> xi{uniform01(rng), 0.0};
    e = evaluation_mixture_propensity(xi, stump(0.5, 0, 2), FixedPolicy{static_cast<ArmIndex>(i % 3)}, eps, 3);
    CHECK(std::abs(e.sum() - 1.0) < 1e-12);
    CHECK(e.minCoeff() >= eps / 3 - 1e-15);
  }
}

TEST_CASE("ipw with certain assignment is the sample mean") {
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(2));
  const std::vector<double> ys{1.0, -2.0, 4.0, 0.5};
  for (int t = 0; t < 4; ++t) log.append({t + 1, {0.1, 0.1}, 0, ys[static_cast<std::size_t>(t)], {1.0, 0.0}, 0});
  const auto v = estimate_policy_value(log, TreePolicy::constant(0));
  CHECK(v.estimate == doctest::Approx(0.875));
  // sample sd of (1, -2, 4, 0.5) over sqrt(4)
  const double var = ((1 - .875) * (1 - .875) + (-2 - .875) * (-2 - .875) + (4 - .875) * (4 - .875) +
                      (.5 - .875) * (.5 - .875)) / 3;
  CHECK(v.se == doctest::Approx(std::sqrt(var / 4)));
  CHECK_THROWS(estimate_policy_value(log, TreePolicy::constant(1)));
}

TEST_CASE("ipw on uniform data weights per-arm means") {
  const auto log = testing::uniform_history(500, 3, 2, arm_mean);
  for (int w = 0; w < 3; ++w) {
    double s = 0.0;
    int c = 0;
    for (const auto& o : log.rows())
      if (o.arm == w) {
        s += o.y;
        ++c;
      }
    const double expected = 3.0 * (s / c) * (static_cast<double>(c) / 500);
    CHECK(estimate_policy_value(log, TreePolicy::constant(w)).estimate == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("rows the policy never matches only change n") {
  Rng rng(3);
  auto log = mixture_log(300, 3, stump(0.5, 1, 0), FixedPolicy{0}, 0.3, arm_mean, rng);
  const auto pol = TreePolicy::constant(0);
  const auto before = estimate_policy_value(log, pol);
  auto extended = log;
  for (int t = 0; t < 50; ++t)
    extended.append({static_cast<std::int64_t>(extended.size()) + 1, {0.5, 0.5}, 2, 3.0, {0.2, 0.3, 0.5}, 1});
  const auto after = estimate_policy_value(extended, pol);
  CHECK(after.n == before.n + 50);
  CHECK(after.estimate * after.n == doctest::Approx(before.estimate * before.n).epsilon(1e-12));
}

TEST_CASE("difference test basics") {
  Rng rng(4);
  const auto log = mixture_log(400, 3, stump(0.5, 0, 1), FixedPolicy{0}, 0.3, arm_mean, rng);
  const auto same = test_value_difference(log, stump(0.5, 0, 1), stump(0.5, 0, 1));
  CHECK(same.diff == 0.0);
  CHECK(same.p_value == 0.5);
  const auto ab = test_value_difference(log, stump(0.5, 0, 1), TreePolicy::constant(0));
  const auto ba = test_value_difference(log, TreePolicy::constant(0), stump(0.5, 0, 1));
  CHECK(ab.diff == doctest::Approx(-ba.diff));
  CHECK(ab.se == doctest::Approx(ba.se));
  CHECK(ab.p_value == doctest::Approx(oracle::normal_cdf(-ab.diff / ab.se)));
  CHECK(one_sided_p_value(0.966, 0.300) == doctest::Approx(1 - oracle::normal_cdf(0.966 / 0.3)));
  CHECK(one_sided_p_value(0.966, 0.300) < 0.001);

  const auto regions = region_partition(TreePolicy::constant(1), 3);
  const auto c = contrast_per_region(log, TreePolicy::constant(1), FixedPolicy{0}, regions);
  const auto whole = test_value_difference(log, TreePolicy::constant(1), TreePolicy::constant(0));
  CHECK(c[1].n == 400);
  REQUIRE(c[1].test);
  CHECK(c[1].test->diff == whole.diff);
  CHECK(c[1].test->se == whole.se);
  CHECK(c[0].n == 0);
  CHECK(!c[0].test);
}

TEST_CASE("value estimates cover the truth") {
  // truth of the stump policy: E[1{x < .5} * 1 + 1{x >= .5} * 2x] = 0.5 + 0.75
  const double truth = 0.5 + 0.75;
  Rng rng(5);
  int covered = 0;
  double total = 0.0, total_sq = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const auto log = mixture_log(1000, 3, stump(0.5, 0, 1), FixedPolicy{2}, 0.3, arm_mean, rng);
    const auto v = estimate_policy_value(log, stump(0.5, 0, 1));
    covered += std::abs(v.estimate - truth) < 1.96 * v.se;
    total += v.estimate;
    total_sq += v.estimate * v.estimate;
  }
  const double mean = total / reps;
  const double sd = std::sqrt((total_sq - reps * mean * mean) / (reps - 1));
  CHECK(std::abs(mean - truth) < 3 * sd / std::sqrt(reps));
  CHECK(covered / double(reps) > 0.9);
}

TEST_CASE("region contrasts recover region-constant effects") {
  // on x1 <= .5 the contextual arm 1 beats fixed arm 0 by 2, elsewhere arm 2 loses by 1
  auto mean = [](const std::vector<double>&, ArmIndex w) { return w == 0 ? 1.0 : (w == 1 ? 3.0 : 0.0); };
  Rng rng(6);
  const auto pc = stump(0.5, 1, 2);
  const auto log = mixture_log(4000, 3, pc, FixedPolicy{0}, 0.3, mean, rng);
  const auto c = contrast_per_region(log, pc, FixedPolicy{0}, region_partition(pc, 3));
  REQUIRE(c[1].test);
  REQUIRE(c[2].test);
  CHECK(std::abs(c[1].test->diff - 2.0) < 3 * c[1].test->se);
  CHECK(std::abs(c[2].test->diff + 1.0) < 3 * c[2].test->se);
  CHECK(c[1].n + c[2].n == 4000);
}

TEST_CASE("subgroup means") {
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(2));
  const double xs[] = {0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  const double ys[] = {1, 2, 6, -1, 3, 5};
  const int ws[] = {0, 0, 1, 0, 1, 1};
  for (int t = 0; t < 6; ++t) log.append({t + 1, {xs[t], 0.0}, ws[t], ys[t], {0.5, 0.5}, 0});
  const std::vector<Subgroup> groups{{"low", [](std::span<const double> x) { return x[0] < 0.5; }},
                                     {"high", [](std::span<const double> x) { return x[0] >= 0.5; }}};
  const auto cells = subgroup_means(log, groups);
  REQUIRE(cells.size() == 4);
  CHECK(*cells[0].mean == doctest::Approx(1.5));
  CHECK(*cells[0].se == doctest::Approx(0.5));
  CHECK(*cells[1].mean == 6.0);
  CHECK(!cells[1].se);
  CHECK(*cells[2].mean == -1.0);
  CHECK(*cells[3].mean == doctest::Approx(4.0));
  CHECK(*cells[3].se == doctest::Approx(1.0));
  const std::vector<Subgroup> none{{"none", [](std::span<const double>) { return false; }}};
  const auto empty = subgroup_means(log, none);
  CHECK(!empty[0].mean);
  CHECK(empty[0].n == 0);
}

TEST_CASE("batch descriptives") {
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(2));
  log.append({1, {0.1, 0.0}, 0, 2.0, {0.5, 0.5}, 0});
  log.append({2, {0.9, 0.0}, 1, 4.0, {0.5, 0.5}, 0});
  log.append({3, {0.2, 0.0}, 1, -1.0, {0.2, 0.8}, 1});
  log.append({4, {0.8, 0.0}, 1, 3.0, {0.6, 0.4}, 1});
  const auto pc = stump(0.5, 0, 1);
  const std::vector<Subgroup> groups{{"low", [](std::span<const double> x) { return x[0] < 0.5; }}};
  int replays = 0;
  const auto rows = batch_descriptives(log, pc, groups, [&](const ObservationLog& h, const Eigen::MatrixXd& c, int b) {
    ++replays;
    CHECK(h.size() == static_cast<std::size_t>(2 * b));
    CHECK(c.rows() == 1);
    CHECK(c(0, 0) == 0.1);  // lower median of (0.1, 0.2)
    Eigen::MatrixXd e(1, 2);
    e << 0.3, 0.7;
    return e;
  });
  CHECK(replays == 2);
  auto find = [&](const std::string& stat, int batch, const std::string& group, const std::string& arm) {
    for (const auto& r : rows)
      if (r.statistic == stat && r.batch == batch && r.subgroup == group && r.arm == arm) return r;
    FAIL("row not found");
    return DescriptiveRow{};
  };
  CHECK(find("mean_reward", 0, "all", "").value == 3.0);
  CHECK(find("mean_reward", 1, "low", "").value == -1.0);
  CHECK(!find("mean_reward", 1, "low", "").se);
  CHECK(find("mean_propensity", 1, "all", "arm0").value == doctest::Approx(0.4));
  // recommended arm: batch 1 rows get arm 0 (0.2) and arm 1 (0.4)
  CHECK(find("recommended_arm_probability", 1, "all", "").value == doctest::Approx(0.3));
  CHECK(find("median_context_propensity", 1, "low", "arm1").value == 0.7);

  const auto single = batch_descriptives(log.prefix(2), pc, {});
  CHECK(single.size() == 1 + 2 + 1);
  const auto uni = testing::uniform_history(450, 3, 7, arm_mean);
  for (const auto& r : batch_descriptives(uni, pc, {}))
    if (r.statistic == "recommended_arm_probability") CHECK(r.value == doctest::Approx(1.0 / 3));
}

TEST_CASE("power across simulations") {
  CHECK(power_across_sims(std::vector<double>(10, 0.001)) == 1.0);
  CHECK(power_across_sims(std::vector<double>(10, 0.5)) == 0.0);
  CHECK(power_across_sims({0.01, 0.05, 0.2, 0.04}) == 0.5);
  CHECK_THROWS(power_across_sims({}));

  // known effect: power of the one-sided z test is Phi(delta / se - 1.645)
  auto mean = [](const std::vector<double>&, ArmIndex w) { return w == 1 ? 0.4 : 0.0; };
  Rng rng(8);
  std::vector<double> ps;
  double se_sum = 0.0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    const auto log = mixture_log(600, 2, TreePolicy::constant(1), FixedPolicy{0}, 0.3, mean, rng);
    const auto d = test_value_difference(log, TreePolicy::constant(1), TreePolicy::constant(0));
    ps.push_back(d.p_value);
    se_sum += d.se;
  }
  const double se = se_sum / reps;
  const double expected = oracle::normal_cdf(0.4 / se - 1.6448536269514722);
  const double power = power_across_sims(ps);
  CHECK(std::abs(power - expected) < 3 * std::sqrt(expected * (1 - expected) / reps));
}
