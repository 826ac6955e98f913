#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"
#include "cbx/log_io.hpp"
#include "cbx/service.hpp"
#include "cbx/sim.hpp"
#include "test_util.hpp"

using namespace cbx;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cbx_service_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig service_config() {
  ExperimentConfig c;
  c.total_periods = 400;
  c.batch_size = 50;
  c.bandit.batch_size = 50;
  c.learning_fraction = 0.5;
  c.bandit.ensemble_size = 3;
  c.bandit.ensemble_depth = 1;
  c.pipeline.top_k = 2;
  c.pipeline.depths = {1};
  c.seed = 5;
  return c;
}

std::string create_body() {
  return json{{"config", experiment_config_to_json(service_config())},
              {"schema", schema_to_json(testing::two_feature_schema())},
              {"arms", {"a", "b", "c"}}}
      .dump();
}

json contexts(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  json items = json::array();
  for (int i = 0; i < n; ++i) items.push_back({u(rng), u(rng)});
  return json{{"contexts", items}};
}

std::string create(ExperimentStore& store) {
  const auto r = store.create(create_body(), "");
  REQUIRE(r.status == 201);
  return r.body["id"];
}

// runs one full batch; returns the open_batch response
json run_batch(ExperimentStore& store, const std::string& id, int n, std::uint64_t seed) {
  const json ctx = contexts(n, seed);
  const auto opened = store.open_batch(id, ctx.dump());
  REQUIRE(opened.status == 200);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> noise(0.0, 0.5);
  json ys = json::object();
  const auto& items = ctx["contexts"];
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& a = opened.body["assignments"][i];
    const std::string arm = a["arm"];
    const double x1 = items[i][0];
    const double mu = arm == "a" ? 1.0 : arm == "b" ? 2.0 * x1 : 0.2;
    ys[a["subject"].get<std::string>()] = mu + noise(rng);
  }
  const auto done = store.submit_outcomes(id, opened.body["batch"], json{{"outcomes", ys}}.dump());
  REQUIRE(done.status == 200);
  CHECK(done.body["closed"] == true);
  return opened.body;
}

}  // namespace

TEST_CASE("create: status codes and idempotency") {
  TempDir dir("create");
  ExperimentStore store(dir.path);
  const auto r1 = store.create(create_body(), "key-1");
  CHECK(r1.status == 201);
  const auto r2 = store.create(create_body(), "key-1");
  CHECK(r2.status == 200);
  CHECK(r2.body["id"] == r1.body["id"]);
  const auto r3 = store.create(create_body(), "key-2");
  CHECK(r3.status == 201);
  CHECK(r3.body["id"] != r1.body["id"]);
  CHECK(store.create("{not json", "").status == 400);
  CHECK(store.create(R"({"bogus": 1})", "").status == 400);
  CHECK(store.create(R"({"arms": ["only"]})", "").status == 400);
  CHECK(store.status("nope").status == 404);
  CHECK(store.open_batch("nope", "[]").status == 404);
}

TEST_CASE("first batch is uniform and duplicate contexts get identical rows") {
  TempDir dir("first");
  ExperimentStore store(dir.path);
  const std::string id = create(store);
  const json body{{"contexts", {{0.3, 0.4}, {0.3, 0.4}, {0.9, 0.1}}}};
  const auto r = store.open_batch(id, body.dump());
  REQUIRE(r.status == 200);
  const auto& as = r.body["assignments"];
  REQUIRE(as.size() == 3);
  for (const auto& a : as)
    for (double e : a["propensities"].get<std::vector<double>>()) CHECK(e == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(as[0]["propensities"] == as[1]["propensities"]);
  CHECK(store.open_batch(id, body.dump()).status == 409);
  const auto st = store.status(id);
  CHECK(st.body["open_batch"] == 0);
  CHECK(st.body["phase"] == "learning");
}

TEST_CASE("open_batch rejects bad contexts") {
  TempDir dir("ctx");
  ExperimentStore store(dir.path);
  const std::string id = create(store);
  CHECK(store.open_batch(id, R"({"contexts": [[0.5, 1.5]]})").status == 422);
  CHECK(store.open_batch(id, R"({"contexts": [[0.5]]})").status == 422);
  CHECK(store.open_batch(id, R"({"contexts": []})").status == 422);
  CHECK(store.open_batch(id, R"({"contexts": [{"x1": 0.5, "x3": 0.1}]})").status == 422);
  CHECK(store.open_batch(id, "{oops").status == 400);
  // nothing was opened by the failures
  CHECK(store.status(id).body["open_batch"].is_null());
  const auto named = store.open_batch(id, R"({"contexts": [{"subject": "s1", "x": {"x1": 0.5, "x2": 0.2}}]})");
  REQUIRE(named.status == 200);
  CHECK(named.body["assignments"][0]["subject"] == "s1");
}

TEST_CASE("outcome submission errors and batch closing") {
  TempDir dir("outcomes");
  ExperimentStore store(dir.path);
  const std::string id = create(store);
  const auto opened = store.open_batch(id, contexts(4, 1).dump());
  REQUIRE(opened.status == 200);
  const auto& as = opened.body["assignments"];
  const std::string s0 = as[0]["subject"], s1 = as[1]["subject"], s2 = as[2]["subject"], s3 = as[3]["subject"];

  CHECK(store.submit_outcomes(id, 0, json{{"outcomes", {{"ghost", 1.0}}}}.dump()).status == 404);
  CHECK(store.submit_outcomes(id, 3, json{{"outcomes", {{s0, 1.0}}}}.dump()).status == 404);
  CHECK(store.submit_outcomes(id, 0, json{{"outcomes", {{s0, 99.0}}}}.dump()).status == 422);
  CHECK(store.submit_outcomes(id, 0, json{{"outcomes", {{s0, "high"}}}}.dump()).status == 422);

  const auto first = store.submit_outcomes(id, 0, json{{"outcomes", {{s0, 1.0}}}}.dump());
  CHECK(first.status == 200);
  CHECK(first.body["remaining"] == 3);
  CHECK(first.body["closed"] == false);
  CHECK(store.submit_outcomes(id, 0, json{{"outcomes", {{s0, 2.0}}}}.dump()).status == 409);
  CHECK(store.status(id).body["rows"] == 0);

  const json arr = json{{"outcomes", {{{"subject", s1}, {"outcome", 0.5}}, {{"subject", s2}, {"outcome", -0.5}}, {{"subject", s3}, {"outcome", 0.0}}}}};
  const auto last = store.submit_outcomes(id, 0, arr.dump());
  CHECK(last.status == 200);
  CHECK(last.body["closed"] == true);
  const auto st = store.status(id).body;
  CHECK(st["rows"] == 4);
  CHECK(st["next_batch"] == 1);
  CHECK(st["open_batch"].is_null());
  CHECK(store.submit_outcomes(id, 0, json{{"outcomes", {{s0, 1.0}}}}.dump()).status == 409);
}

TEST_CASE("full lifecycle: learning, policy, evaluation, completion") {
  TempDir dir("life");
  ExperimentStore store(dir.path);
  const std::string id = create(store);
  const auto cfg = service_config();
  CHECK(store.policy(id).status == 409);

  const double floor_min = floor_schedule(cfg.learning_periods(), cfg.bandit.floor_exponent, 3);
  for (int b = 0; b < cfg.learning_batches(); ++b) {
    const json opened = run_batch(store, id, cfg.batch_size, 100 + b);
    for (const auto& a : opened["assignments"]) {
      const auto e = a["propensities"].get<std::vector<double>>();
      double sum = 0.0;
      for (double v : e) {
        CHECK(v >= floor_min - 1e-12);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    if (b + 1 < cfg.learning_batches()) CHECK(store.policy(id).status == 409);
  }

  const auto st = store.status(id).body;
  CHECK(st["phase"] == "evaluation");
  const auto pol = store.policy(id);
  REQUIRE(pol.status == 200);
  REQUIRE(pol.body.contains("frequency_scores"));
  double fsum = 0.0;
  for (const auto& [arm, f] : pol.body["frequency_scores"].items()) fsum += f.get<double>();
  CHECK(fsum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pol.body["selected_arms"].size() == 2);
  CHECK(pol.body["depth"] == 1);

  const int K = 3;
  for (int b = cfg.learning_batches(); b * cfg.batch_size < cfg.total_periods; ++b) {
    const json opened = run_batch(store, id, cfg.batch_size, 200 + b);
    for (const auto& a : opened["assignments"])
      for (double v : a["propensities"].get<std::vector<double>>()) CHECK(v >= cfg.epsilon / K - 1e-12);
  }
  CHECK(store.status(id).body["phase"] == "complete");
  CHECK(store.open_batch(id, contexts(2, 9).dump()).status == 409);
  CHECK(store.policy(id).status == 200);
}

TEST_CASE("restart replays the event log") {
  TempDir straight_dir("straight"), restarted_dir("restarted");
  const auto cfg = service_config();
  Eigen::MatrixXd probe(5, 2);
  probe << 0.1, 0.2, 0.4, 0.9, 0.6, 0.6, 0.8, 0.1, 0.95, 0.5;

  ExperimentStore straight(straight_dir.path);
  const std::string id = create(straight);
  for (int b = 0; b < cfg.learning_batches(); ++b) run_batch(straight, id, cfg.batch_size, 300 + b);

  json status_mid;
  {
    ExperimentStore store(restarted_dir.path);
    REQUIRE(create(store) == id);
    for (int b = 0; b + 1 < cfg.learning_batches(); ++b) run_batch(store, id, cfg.batch_size, 300 + b);
    status_mid = store.status(id).body;
  }
  {
    ExperimentStore store(restarted_dir.path);
    CHECK(store.status(id).body == status_mid);
    ExperimentStore twin(restarted_dir.path);
    const Eigen::MatrixXd p1 = store.preview_propensities(id, probe);
    const Eigen::MatrixXd p2 = twin.preview_propensities(id, probe);
    CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);
    run_batch(store, id, cfg.batch_size, 300 + cfg.learning_batches() - 1);
    CHECK(store.status(id).body == straight.status(id).body);
    CHECK(store.policy(id).body == straight.policy(id).body);
  }

  // kill with a half-answered batch open
  {
    ExperimentStore store(restarted_dir.path);
    const auto opened = store.open_batch(id, contexts(3, 77).dump());
    REQUIRE(opened.status == 200);
    const std::string s0 = opened.body["assignments"][0]["subject"];
    REQUIRE(store.submit_outcomes(id, opened.body["batch"], json{{"outcomes", {{s0, 0.25}}}}.dump()).status == 200);
  }
  ExperimentStore store(restarted_dir.path);
  CHECK(store.open_batch(id, contexts(1, 1).dump()).status == 409);
  const int batch = store.status(id).body["open_batch"];
  const std::string s0 = "b" + std::to_string(batch) + "-0";
  const std::string s1 = "b" + std::to_string(batch) + "-1";
  const std::string s2 = "b" + std::to_string(batch) + "-2";
  CHECK(store.submit_outcomes(id, batch, json{{"outcomes", {{s0, 1.0}}}}.dump()).status == 409);
  const auto done = store.submit_outcomes(id, batch, json{{"outcomes", {{s1, 1.0}, {s2, 0.0}}}}.dump());
  CHECK(done.status == 200);
  CHECK(done.body["closed"] == true);
  CHECK(store.status(id).body["rows"] == cfg.learning_periods() + 3);
}

TEST_CASE("a torn final event is dropped on replay") {
  TempDir dir("torn");
  std::string id;
  json before;
  {
    ExperimentStore store(dir.path);
    id = create(store);
    run_batch(store, id, 10, 1);
    before = store.status(id).body;
  }
  {
    std::ofstream out(dir.path / (id + ".ndjson"), std::ios::app);
    out << R"({"v":1,"type":"batch_op)";
  }
  ExperimentStore store(dir.path);
  CHECK(store.status(id).body == before);
}
