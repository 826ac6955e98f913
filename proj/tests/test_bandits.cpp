#include <doctest.h>

#include <cmath>

#include "cbx/bandits.hpp"
#include "cbx/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cbx;
using cbx::testing::uniform_history;

namespace {

// arm 2 is best when x1 > 0.5, arm 0 otherwise
double planted(const std::vector<double>& x, ArmIndex w) {
  if (w == 2) return x[0] > 0.5 ? 3.0 : -1.0;
  if (w == 0) return x[0] > 0.5 ? 0.0 : 2.0;
  return -0.5;
}

void check_rows(const Eigen::MatrixXd& e, double floor) {
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    CHECK(std::abs(e.row(i).sum() - 1.0) <= 1e-9);
    CHECK(e.row(i).minCoeff() >= floor - 1e-15);
  }
}

Eigen::MatrixXd contexts_with_duplicates(Rng& rng, int n) {
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    if (i % 5 == 4) {
      x.row(i) = x.row(i - 2);
    } else {
      x(i, 0) = uniform01(rng);
      x(i, 1) = uniform01(rng);
    }
  }
  return x;
}

}  // namespace

TEST_CASE("uniform assignment") {
  const auto e = uniform_assign(10, 8);
  CHECK((e.array() == 0.125).all());
  check_rows(e, 0.125);
  Rng rng(1);
  const int n = 80000;
  const auto arms = sample_arms(uniform_assign(n, 8), rng);
  std::vector<int> counts(8, 0);
  for (auto w : arms) ++counts[static_cast<std::size_t>(w)];
  const double se = std::sqrt(0.125 * 0.875 / n);
  for (int c : counts) CHECK(std::abs(c / double(n) - 0.125) < 3 * se);
}

TEST_CASE("config json") {
  BanditConfig c;
  c.algorithm = Algorithm::BootstrapTTTS;
  c.ensemble_size = 7;
  c.floor_exponent = 0.25;
  c.seed = 99;
  const auto back = bandit_config_from_json(bandit_config_to_json(c));
  CHECK(back.algorithm == c.algorithm);
  CHECK(back.ensemble_size == 7);
  CHECK(back.floor_exponent == 0.25);
  CHECK(back.seed == 99);
  CHECK_THROWS_AS(bandit_config_from_json({{"ensemble_sise", 3}}), ValidationError);
  CHECK_THROWS_AS(bandit_config_from_json({{"ensemble_size", 0}}), ValidationError);
  CHECK_THROWS(algorithm_from_string("LinUCB"));
  for (auto a : {Algorithm::Uniform, Algorithm::TreeBagging, Algorithm::BootstrapThompson, Algorithm::BootstrapES,
                 Algorithm::BootstrapTTTS})
    CHECK(algorithm_from_string(to_string(a)) == a);
}

TEST_CASE("treebagging: first batch is uniform") {
  BanditConfig c;
  c.ensemble_size = 5;
  ObservationLog empty(testing::two_feature_schema(), testing::arms_named(8));
  Rng rng(2);
  const auto e = propose_propensities(empty, contexts_with_duplicates(rng, 20), c, 0);
  CHECK((e.array() == 0.125).all());
}

TEST_CASE("treebagging: floor, duplicates and determinism") {
  BanditConfig c;
  c.ensemble_size = 10;
  c.ensemble_depth = 1;
  c.seed = 3;
  const auto hist = uniform_history(300, 4, 5, planted);
  Rng rng(4);
  const auto x = contexts_with_duplicates(rng, 60);
  std::vector<TreePolicy> ens;
  const auto e = treebagging_assign(hist, x, c, 2, &ens);
  CHECK(ens.size() == 10);
  check_rows(e, floor_schedule(301, c.floor_exponent, 4));
  for (int i = 4; i < 60; i += 5) CHECK(e.row(i) == e.row(i - 2));
  CHECK(treebagging_assign(hist, x, c, 2) == e);
  c.threads = 3;
  CHECK(treebagging_assign(hist, x, c, 2) == e);

  // rows equal the floored ensemble vote shares
  const auto votes = ensemble_votes(ens, x, 4);
  const double f = floor_schedule(301, c.floor_exponent, 4);
  for (int i = 0; i < 60; ++i) {
    std::vector<double> raw;
    for (int w = 0; w < 4; ++w) raw.push_back(votes(i, w));
    const auto expected = oracle::floor_by_bisection(raw, f);
    for (int w = 0; w < 4; ++w) CHECK(e(i, w) == doctest::Approx(expected[static_cast<std::size_t>(w)]).epsilon(1e-9));
  }
}

TEST_CASE("treebagging: assignment concentrates on the better arm") {
  BanditConfig c;
  c.ensemble_size = 10;
  c.ensemble_depth = 1;
  c.seed = 8;
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(3));
  Rng rng(9);
  std::vector<double> best_share;
  for (int b = 0; b < 6; ++b) {
    Eigen::MatrixXd x(150, 2);
    for (int i = 0; i < 150; ++i) x.row(i) << uniform01(rng), uniform01(rng);
    const auto e = propose_propensities(log, x, c, b);
    const auto arms = sample_arms(e, rng);
    double share = 0.0;
    for (int i = 0; i < 150; ++i) {
      const std::vector<double> xi{x(i, 0), x(i, 1)};
      const ArmIndex opt = xi[0] > 0.5 ? 2 : 0;
      share += e(i, opt) / 150;
      const double y = std::clamp(planted(xi, arms[static_cast<std::size_t>(i)]) + 2.0 * (uniform01(rng) - 0.5), -10.0, 10.0);
      log.append({static_cast<std::int64_t>(log.size()) + 1, xi, arms[static_cast<std::size_t>(i)], y,
                  {e(i, 0), e(i, 1), e(i, 2)}, b});
    }
    best_share.push_back(share);
  }
  CHECK(best_share.front() == doctest::Approx(1.0 / 3));
  // the floor caps any arm at 1 - (K - 1) f
  const double cap = 1.0 - 2.0 * floor_schedule(751, c.floor_exponent, 3);
  CHECK(best_share.back() > 0.9 * cap);
  CHECK(best_share[5] >= best_share[1]);
}

TEST_CASE("thompson tally") {
  Rng rng(10);
  Eigen::Vector3d mean(0.1, 0.7, 0.3);
  auto t = thompson_tally(mean, Eigen::Vector3d::Zero(), 1000, rng);
  CHECK(t.best == Eigen::Vector3d(0, 1, 0));
  CHECK(t.runner_up == Eigen::Vector3d(0, 0, 1));

  const int N = 1000;
  t = thompson_tally(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(2.0, 2.0), N, rng);
  CHECK(std::abs(t.best(0) - 0.5) < 3 * std::sqrt(0.25 / N));

  const int big = 200000;
  const double m1 = 0.4, m2 = 0.0, v1 = 0.5, v2 = 1.5;
  t = thompson_tally(Eigen::Vector2d(m1, m2), Eigen::Vector2d(v1, v2), big, rng);
  const double truth = oracle::normal_cdf((m1 - m2) / std::sqrt(v1 + v2));
  CHECK(std::abs(t.best(0) - truth) < 3 * std::sqrt(truth * (1 - truth) / big));

  t = thompson_tally(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(), 30000, rng);
  const Eigen::VectorXd tt = top_two_weights(t.best, t.runner_up, 0.5);
  for (int w = 0; w < 3; ++w) CHECK(std::abs(tt(w) - 1.0 / 3) < 3 * std::sqrt((2.0 / 9) / 30000));
}

TEST_CASE("exploration sampling and top-two transforms") {
  CHECK(exploration_sampling_weights(Eigen::Vector2d(0.5, 0.5)).isApprox(Eigen::Vector2d(0.5, 0.5)));
  CHECK(exploration_sampling_weights(Eigen::Vector2d(0.8, 0.2)).isApprox(Eigen::Vector2d(0.5, 0.5)));
  const auto es = exploration_sampling_weights(Eigen::Vector3d(0.9, 0.05, 0.05));
  const double s = 0.09 + 2 * 0.0475;
  CHECK(es(0) == doctest::Approx(0.09 / s));
  CHECK(es(1) == doctest::Approx(0.0475 / s));
  CHECK(es(0) == doctest::Approx(0.486).epsilon(1e-3));
  CHECK(es(1) == doctest::Approx(0.257).epsilon(1e-3));
  CHECK(exploration_sampling_weights(Eigen::Vector3d(1, 0, 0)) == Eigen::Vector3d(1, 0, 0));
  CHECK(top_two_weights(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), 0.5) == Eigen::Vector2d(0.5, 0.5));
}

TEST_CASE("bootstrap family assignments") {
  const auto hist = uniform_history(300, 4, 11, planted);
  Rng rng(12);
  const auto x = contexts_with_duplicates(rng, 40);
  for (auto a : {Algorithm::BootstrapThompson, Algorithm::BootstrapES, Algorithm::BootstrapTTTS}) {
    BanditConfig c;
    c.algorithm = a;
    c.bootstrap_fits = 10;
    c.posterior_draws = 500;
    c.seed = 13;
    const auto e = propose_propensities(hist, x, c, 2);
    check_rows(e, c.min_propensity);
    for (int i = 4; i < 40; i += 5) CHECK(e.row(i) == e.row(i - 2));
    CHECK(propose_propensities(hist, x, c, 2) == e);
    c.threads = 2;
    CHECK(propose_propensities(hist, x, c, 2) == e);
  }
}

TEST_CASE("bootstrap linear model: missing arm defaults") {
  // arm 3 never observed
  auto hist = uniform_history(200, 3, 14, planted);
  ObservationLog four(hist.schema(), testing::arms_named(4));
  for (const auto& r : hist.rows()) {
    auto o = r;
    o.e = {0.25, 0.25, 0.25, 0.25};
    four.append(o);
  }
  BanditConfig c;
  c.bootstrap_fits = 5;
  const auto m = fit_bootstrap_linear(four, c, 1);
  CHECK(m.fits[3].empty());
  CHECK(m.fits[0].size() == 5);
  Eigen::VectorXd mean, var;
  m.moments(std::vector<double>{0.2, 0.3}, mean, var);
  CHECK(mean(3) == 0.0);
  CHECK(var(3) == 1.0);
  CHECK(var.minCoeff() >= 0.0);
}
