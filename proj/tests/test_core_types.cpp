#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "cbx/core_types.hpp"
#include "cbx/errors.hpp"
#include "cbx/log_io.hpp"
#include "cbx/rng.hpp"
#include "cbx/survey.hpp"
#include "test_util.hpp"

using namespace cbx;
using cbx::testing::random_simplex;

TEST_CASE("floor: worked example") {
  const std::vector<double> raw{0.7, 0.2, 0.05, 0.05};
  const auto e = apply_probability_floor(raw, 0.1);
  // c = 6/7 applied to the two arms above the floor
  CHECK(e[0] == doctest::Approx(0.1 + 6.0 / 7.0 * 0.6).epsilon(1e-12));
  CHECK(e[0] == doctest::Approx(0.614286).epsilon(1e-6));
  CHECK(e[1] == doctest::Approx(0.185714).epsilon(1e-6));
  CHECK(e[2] == 0.1);
  CHECK(e[3] == 0.1);
}

TEST_CASE("floor: point mass") {
  const auto e = apply_probability_floor(std::vector<double>{1, 0, 0, 0}, 0.05);
  CHECK(e[0] == doctest::Approx(0.85).epsilon(1e-12));
  for (int i = 1; i < 4; ++i) CHECK(e[static_cast<std::size_t>(i)] == 0.05);
}

TEST_CASE("floor: uniform input is a fixed point") {
  for (int k = 2; k <= 8; ++k) {
    const std::vector<double> u(static_cast<std::size_t>(k), 1.0 / k);
    for (double f : {0.0, 0.5 / k, 1.0 / k}) {
      const auto e = apply_probability_floor(u, f);
      for (double v : e) CHECK(v == doctest::Approx(1.0 / k).epsilon(1e-12));
    }
  }
}

TEST_CASE("floor: split ensemble under f = 0.05") {
  const auto e = apply_probability_floor(std::vector<double>{0.5, 0.5, 0, 0}, 0.05);
  // sum to one: 2f + 2(f + c(0.5 - f)) = 1 gives c = 0.8 / 0.9
  const double c = (1.0 - 4 * 0.05) / (1.0 - 2 * 0.05);
  CHECK(e[0] == doctest::Approx(0.05 + c * 0.45).epsilon(1e-12));
  CHECK(e[0] == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(e[1] == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(e[2] == 0.05);
}

TEST_CASE("floor: maximal floor collapses to uniform") {
  const auto e = apply_probability_floor(std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0}, floor_schedule(1, 1.0 / 16, 8));
  for (double v : e) CHECK(v == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("floor: infeasible floor is rejected") {
  CHECK_THROWS_AS(apply_probability_floor(std::vector<double>{0.5, 0.5}, 0.6), std::invalid_argument);
  CHECK_THROWS_AS(apply_probability_floor(std::vector<double>{0.5, 0.4}, 0.1), std::invalid_argument);
}

TEST_CASE("floor: random properties") {
  Rng rng(11);
  for (int rep = 0; rep < 2000; ++rep) {
    const int k = 2 + static_cast<int>(uniform_index(rng, 9));
    auto raw = random_simplex(rng, k);
    if (rep % 5 == 0) {
      raw.assign(raw.size(), 0.0);
      raw[uniform_index(rng, raw.size())] = 1.0;
    }
    const double f = uniform01(rng) / k;
    const auto e = apply_probability_floor(raw, f);
    const double sum = std::accumulate(e.begin(), e.end(), 0.0);
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    for (std::size_t a = 0; a < e.size(); ++a) {
      CHECK(e[a] >= f - 1e-15);
      for (std::size_t b = 0; b < e.size(); ++b)
        if (raw[a] >= raw[b]) CHECK(e[a] >= e[b] - 1e-15);
    }
    const auto again = apply_probability_floor(e, f);
    for (std::size_t a = 0; a < e.size(); ++a) CHECK(again[a] == doctest::Approx(e[a]).epsilon(1e-12));
  }
}

TEST_CASE("floor schedule") {
  CHECK(floor_schedule(1, 1.0 / 16, 8) == 0.125);
  CHECK(floor_schedule(1500, 1.0 / 16, 8) == doctest::Approx(std::pow(1500.0, -1.0 / 16) / 8).epsilon(1e-14));
  CHECK(floor_schedule(1500, 1.0 / 16, 8) == doctest::Approx(0.07914).epsilon(1e-4));
  double prev = 1.0;
  for (std::int64_t t = 1; t < 5000; t += 37) {
    const double f = floor_schedule(t, 1.0 / 16, 8);
    CHECK(f <= 0.125);
    CHECK(f < prev);
    CHECK(floor_schedule(t, 1.0 / 8, 8) <= f);
    prev = f;
  }
  CHECK_THROWS_AS(floor_schedule(0, 1.0 / 16, 8), std::domain_error);
}

TEST_CASE("aipw: formula") {
  const std::vector<ArmIndex> arms{0};
  const std::vector<double> y{2.0};
  Eigen::MatrixXd mu(1, 2), e(1, 2);
  mu << 1.0, 3.0;
  e << 0.5, 0.5;
  const auto t = aipw_scores(arms, y, mu, e, {0, 1});
  CHECK(t.scores(0, 0) == doctest::Approx(3.0));
  CHECK(t.scores(0, 1) == doctest::Approx(3.0));
}

TEST_CASE("aipw: ipw collapses to the outcome") {
  const std::vector<ArmIndex> arms{1};
  const std::vector<double> y{5.0};
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(1, 3), e(1, 3);
  e << 0.0, 1.0, 0.0;
  const auto t = aipw_scores(arms, y, mu, e, {0, 1, 2});
  CHECK(t.scores(0, 0) == 0.0);
  CHECK(t.scores(0, 1) == 5.0);
  CHECK(t.scores(0, 2) == 0.0);
}

TEST_CASE("aipw: bad inputs name the row") {
  const std::vector<ArmIndex> arms{0, 1};
  const std::vector<double> y{1.0, 2.0};
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(2, 2), e(2, 2);
  e << 0.5, 0.5, 1.0, 0.0;
  try {
    aipw_scores(arms, y, mu, e, {0, 1});
    FAIL("expected a row error");
  } catch (const RowError& err) {
    CHECK(err.row() == 1);
  }
  e << 0.5, 0.5, 0.5, 0.5;
  mu(0, 1) = std::nan("");
  CHECK_THROWS_AS(aipw_scores(arms, y, mu, e, {0, 1}), RowError);
}

TEST_CASE("frequency scores") {
  Eigen::MatrixXd x(2, 1);
  x << 0.2, 0.8;
  std::vector<TreePolicy> one{TreePolicy::constant(2)};
  auto f = frequency_scores(one, x, 4);
  CHECK(f == std::vector<double>{0, 0, 1, 0});

  TreePolicy split;
  split.nodes = {{0, 0.5, 1, 2, 0}, {-1, 0, -1, -1, 0}, {-1, 0, -1, -1, 1}};
  std::vector<TreePolicy> two{TreePolicy::constant(0), split};
  f = frequency_scores(two, x, 2);
  CHECK(f[0] == doctest::Approx(0.75));
  CHECK(f[1] == doctest::Approx(0.25));
  std::vector<TreePolicy> swapped{split, TreePolicy::constant(0)};
  CHECK(frequency_scores(swapped, x, 2) == f);
  CHECK_THROWS(frequency_scores({}, x, 2));
}

TEST_CASE("schema and arm set validation") {
  CHECK_THROWS_AS(ArmSet({"a", "a"}), ValidationError);
  CHECK_THROWS_AS(ArmSet({"a", ""}), ValidationError);
  const ArmSet arms({"a", "b"});
  CHECK(arms.require("b") == 1);
  CHECK_THROWS_AS(arms.require("c"), ValidationError);

  const auto schema = testing::two_feature_schema();
  CHECK_NOTHROW(schema.validate_context(std::vector<double>{0.5, 1.0}));
  CHECK_THROWS_AS(schema.validate_context(std::vector<double>{0.5, 1.5}), ValidationError);
  CHECK_THROWS_AS(schema.validate_context(std::vector<double>{0.5}), ValidationError);
  CHECK_THROWS_AS(schema.validate_outcome(11.0), ValidationError);
}

TEST_CASE("log append enforces the row contract") {
  ObservationLog log(testing::two_feature_schema(), testing::arms_named(2));
  log.append({1, {0.1, 0.2}, 0, 1.0, {0.5, 0.5}, 0});
  CHECK_THROWS_AS(log.append({1, {0.1, 0.2}, 0, 1.0, {0.5, 0.5}, 0}), RowError);     // t not increasing
  CHECK_THROWS_AS(log.append({2, {0.1, 0.2}, 0, 1.0, {0.6, 0.5}, 0}), RowError);     // sum != 1
  CHECK_THROWS_AS(log.append({2, {0.1, 0.2}, 1, 1.0, {1.0, 0.0}, 0}), RowError);     // zero on realized arm
  CHECK_THROWS_AS(log.append({2, {0.1, 0.2}, 0, 12.0, {0.5, 0.5}, 0}), RowError);    // outcome range
  CHECK_THROWS_AS(log.append({2, {0.1, 2.0}, 0, 1.0, {0.5, 0.5}, 0}), RowError);     // context range
  log.append({2, {0.1, 0.2}, 1, -1.0, {0.5, 0.5}, 1});
  CHECK_THROWS_AS(log.append({3, {0.1, 0.2}, 0, 1.0, {0.5, 0.5}, 0}), RowError);     // batch decreasing
  CHECK(log.size() == 2);
}

TEST_CASE("log csv round trip is exact") {
  auto log = generate_corpus(400, 3);
  log.set_learning_rows(300);
  log.set_metadata({{"note", "fixture"}});
  const auto dir = std::filesystem::temp_directory_path() / "cbx_core_roundtrip";
  std::filesystem::create_directories(dir);
  write_log(log, dir / "log.csv");
  const auto back = read_log(dir / "log.csv");
  CHECK(back == log);
  CHECK(log_to_csv(back) == log_to_csv(log));

  // awkward doubles survive shortest-form formatting
  ObservationLog tiny(testing::two_feature_schema(), testing::arms_named(3));
  tiny.append({1, {0.1, 1.0 / 3.0}, 2, -0.3, {0.1, 0.2, 0.7}, 0});
  tiny.append({2, {std::nextafter(0.5, 1.0), 0.0}, 0, 1e-300, {1.0 / 3, 1.0 / 3, 1.0 - 2.0 / 3}, 1});
  const auto again = log_from_csv(log_to_csv(tiny), log_sidecar(tiny));
  CHECK(again == tiny);
  std::filesystem::remove_all(dir);
}

TEST_CASE("rng streams are keyed, not sequential") {
  CHECK(derive_seed(1, Purpose::Arms, {3}) == derive_seed(1, Purpose::Arms, {3}));
  CHECK(derive_seed(1, Purpose::Arms, {3}) != derive_seed(1, Purpose::Arms, {4}));
  CHECK(derive_seed(1, Purpose::Arms, {3}) != derive_seed(1, Purpose::Outcomes, {3}));
  CHECK(derive_seed(1, Purpose::Arms, {3}) != derive_seed(2, Purpose::Arms, {3}));
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(r);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("tree predict, depth and leaves") {
  TreePolicy t;
  t.nodes = {{0, 0.5, 1, 2, 0}, {-1, 0, -1, -1, 3}, {1, 0.2, 3, 4, 0}, {-1, 0, -1, -1, 1}, {-1, 0, -1, -1, 2}};
  CHECK(t.depth() == 2);
  CHECK(t.predict(std::vector<double>{0.5, 0.9}) == 3);
  CHECK(t.predict(std::vector<double>{0.6, 0.2}) == 1);
  CHECK(t.predict(std::vector<double>{0.6, 0.3}) == 2);
  CHECK(TreePolicy::constant(4).depth() == 0);
}
