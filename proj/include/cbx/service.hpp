#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"
#include "cbx/pipeline.hpp"
#include "cbx/sim.hpp"

namespace cbx {

inline constexpr int kEventLogVersion = 1;

enum class Phase { Learning, Evaluation, Complete };
std::string to_string(Phase p);

struct Response {
  int status = 200;
  nlohmann::json body;
};

// One experiment: config, finalized log, the open batch and, once learning
// is done, the pipeline report. Mutated only through ExperimentStore.
struct Experiment {
  struct Subject {
    std::string id;
    std::vector<double> x;
    ArmIndex arm = 0;
    std::vector<double> e;
    std::optional<double> y;
  };
  struct OpenBatch {
    int batch = 0;
    std::vector<Subject> subjects;
    std::map<std::string, std::size_t> index;
    std::size_t remaining = 0;
  };

  std::string id;
  std::string idempotency_key;
  ExperimentConfig config;
  ObservationLog log;
  Phase phase = Phase::Learning;
  int next_batch = 0;
  std::optional<OpenBatch> open;
  std::optional<PolicyReport> policy;
  std::shared_ptr<const nlohmann::json> report;  // immutable snapshot for readers
  std::filesystem::path event_log;
};

// Experiment lifecycle behind the HTTP endpoints. Every state change is
// appended to <state_dir>/<id>.ndjson before it is acknowledged; opening a
// store replays those files.
class ExperimentStore {
 public:
  explicit ExperimentStore(std::filesystem::path state_dir);

  Response create(const std::string& body, const std::string& idempotency_key);
  Response open_batch(const std::string& id, const std::string& body);
  Response submit_outcomes(const std::string& id, int batch, const std::string& body);
  Response policy(const std::string& id) const;
  Response status(const std::string& id) const;

  // Propensities the next batch would get for these contexts; no state change.
  Eigen::MatrixXd preview_propensities(const std::string& id, const Eigen::MatrixXd& contexts) const;

 private:
  struct Entry {
    mutable std::mutex mu;
    Experiment exp;
  };
  Entry* find(const std::string& id) const;
  void replay(const std::filesystem::path& file);
  void append_event(const Experiment& exp, const nlohmann::json& event) const;
  void close_batch(Experiment& exp, bool persist);
  void finish_learning(Experiment& exp, bool persist, const nlohmann::json* recorded_report);

  std::filesystem::path dir_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::unique_ptr<Entry>> experiments_;
  std::map<std::string, std::string> by_key_;
  int counter_ = 0;
};

// Serves the store on host:port until stopped. Blocks.
void serve(ExperimentStore& store, const std::string& host, int port);

}  // namespace cbx
