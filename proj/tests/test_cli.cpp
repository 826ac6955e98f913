#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cbx/csv.hpp"
#include "cbx/log_io.hpp"

using namespace cbx;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CBX_DATA_DIR;

struct Run {
  int code;
  std::string err;
};

struct Workdir {
  fs::path path;
  Workdir() {
    path = fs::temp_directory_path() / ("cbx_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~Workdir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cbx(const Workdir& w, const std::string& args) {
  const fs::path err = w.path / "stderr.txt";
  const std::string cmd = std::string("\"") + CBX_BIN + "\" " + args + " > \"" + (w.path / "stdout.txt").string() +
                          "\" 2> \"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

std::vector<csv::Row> read_csv(const fs::path& p) { return csv::parse(slurp(p)); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("bad inputs exit 2") {
  Workdir w;
  auto r = run_cbx(w, "simulate --out " + q(w.path));
  CHECK(r.code == 2);
  CHECK(r.err.find("--config") != std::string::npos);

  r = run_cbx(w, "simulate --config " + q(w.path / "missing.json"));
  CHECK(r.code == 2);

  std::ofstream(w.path / "empty.csv").close();
  r = run_cbx(w, "learn-policy " + q(w.path / "empty.csv") + " --out " + q(w.path));
  CHECK(r.code == 2);

  r = run_cbx(w, "learn-policy " + q(w.path / "nope.csv"));
  CHECK(r.code == 2);

  r = run_cbx(w, "no-such-command");
  CHECK(r.code == 2);

  std::ofstream(w.path / "bad.json") << R"({"experiment": {"total_periods": 3000}, "stray": 1})";
  r = run_cbx(w, "simulate --config " + q(w.path / "bad.json"));
  CHECK(r.code == 2);
  CHECK(r.err.find("stray") != std::string::npos);
}

TEST_CASE("ingest: round trip and unknown columns") {
  Workdir w;
  // a survey export is the corpus CSV without its sidecar
  fs::copy_file(kData / "corpus.csv", w.path / "export.csv");
  auto r = run_cbx(w, "ingest " + q(w.path / "export.csv") + " --out " + q(w.path / "out"));
  REQUIRE(r.code == 0);
  const ObservationLog back = read_log(w.path / "out" / "log.csv");
  const ObservationLog orig = read_log(kData / "corpus.csv");
  CHECK(log_to_csv(back) == log_to_csv(orig));

  auto rows = read_csv(kData / "corpus.csv");
  rows[0].push_back("favorite_color");
  for (std::size_t i = 1; i < rows.size(); ++i) rows[i].push_back("blue");
  {
    std::ofstream out(w.path / "extra.csv");
    for (const auto& row : rows) out << csv::join(row) << '\n';
  }
  r = run_cbx(w, "ingest " + q(w.path / "extra.csv") + " --out " + q(w.path / "out2"));
  CHECK(r.code == 2);
  CHECK(r.err.find("favorite_color") != std::string::npos);
  CHECK_FALSE(fs::exists(w.path / "out2" / "log.csv"));
}

TEST_CASE("learn-policy, evaluate and plot-data on the bundled experiment") {
  Workdir w;
  auto r = run_cbx(w, "learn-policy " + q(kData / "learning_log.csv") + " --out " + q(w.path));
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(slurp(w.path / "policy_report.json"));
  CHECK(report["format"] == "cbx-policy-report");
  CHECK(report["selected_arms"].size() == 4);
  CHECK(report["depth"].get<int>() <= 2);
  CHECK(report["depth"].get<int>() >= 1);
  double fsum = 0.0;
  for (const auto& [arm, f] : report["frequency_scores"].items()) fsum += f.get<double>();
  CHECK(fsum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(slurp(w.path / "policy_tree.txt") == report["contextual_policy_text"].get<std::string>());

  r = run_cbx(w, "evaluate " + q(kData / "experiment_log.csv") + " --policy " + q(w.path / "policy_report.json") +
                 " --out " + q(w.path));
  REQUIRE(r.code == 0);
  const auto t8 = read_csv(w.path / "table_learned_policy.csv");
  REQUIRE(t8.size() == 3);
  CHECK(t8[0] == csv::Row{"Policy", "Est. Value", "Std. Error", "Est. Diff", "Std. Error", "p-value"});
  CHECK(t8[1][0].rfind("Best fixed policy (", 0) == 0);
  CHECK(t8[2][0] == "Learned contextual policy");
  const double p = std::stod(t8[2][5]);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);

  const auto t9 = read_csv(w.path / "table_fixed_policies.csv");
  CHECK(t9.size() == 9);

  const auto t10 = read_csv(w.path / "table_regions.csv");
  REQUIRE(t10.size() == 4);
  CHECK(t10[0] == csv::Row{"Contrast", "Est. Diff", "Std. Error", "p-value", "n"});
  std::size_t n_total = 0;
  for (std::size_t i = 1; i < t10.size(); ++i) {
    const auto n = std::stoul(t10[i][4]);
    n_total += n;
    if (n == 0) CHECK(t10[i][1].empty());
    else CHECK_FALSE(t10[i][1].empty());
  }
  CHECK(n_total <= 1500);

  r = run_cbx(w, "plot-data " + q(kData / "experiment_log.csv") + " --policy " + q(w.path / "policy_report.json") +
                 " --out " + q(w.path));
  REQUIRE(r.code == 0);
  const auto reward = read_csv(w.path / "reward_by_batch.csv");
  REQUIRE(reward.size() > 1);
  CHECK(reward[0] == csv::Row{"batch", "subgroup", "mean_reward", "se", "n"});
  std::set<std::pair<std::string, std::string>> keys;
  std::set<std::string> batches, groups;
  for (std::size_t i = 1; i < reward.size(); ++i) {
    CHECK(keys.insert({reward[i][0], reward[i][1]}).second);
    batches.insert(reward[i][0]);
    groups.insert(reward[i][1]);
  }
  CHECK(batches.size() == 20);
  CHECK(keys.size() == batches.size() * groups.size());

  const auto all = read_csv(w.path / "batch_descriptives.csv");
  int prob_rows = 0;
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (all[i][0] != "recommended_arm_probability" || all[i][4].empty()) continue;
    ++prob_rows;
    const double v = std::stod(all[i][4]);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(prob_rows > 0);
}

TEST_CASE("simulate: seed determinism") {
  Workdir w;
  {
    std::ofstream cfg(w.path / "tiny.json");
    cfg << R"({"dgp": {"corpus": ")" << (kData / "corpus.csv").string()
        << R"("}, "study": {"algorithms": ["Uniform", "TreeBagging"], "replicates": 2},
              "experiment": {"total_periods": 600, "batch_size": 150,
                             "bandit": {"ensemble_size": 3, "ensemble_depth": 1}}})";
  }
  const std::string base = "simulate --config " + q(w.path / "tiny.json");
  REQUIRE(run_cbx(w, base + " --seed 3 --out " + q(w.path / "a")).code == 0);
  REQUIRE(run_cbx(w, base + " --seed 3 --threads 2 --out " + q(w.path / "b")).code == 0);
  REQUIRE(run_cbx(w, base + " --seed 4 --out " + q(w.path / "c")).code == 0);
  const std::string a = slurp(w.path / "a" / "study_tidy.csv");
  CHECK(!a.empty());
  CHECK(a == slurp(w.path / "b" / "study_tidy.csv"));
  CHECK(a != slurp(w.path / "c" / "study_tidy.csv"));
  const auto used = nlohmann::json::parse(slurp(w.path / "a" / "config_used.json"));
  CHECK(used["experiment"]["seed"] == 3);
}
