#include "cbx/service.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>

#include <httplib.h>

#include "cbx/bandits.hpp"
#include "cbx/errors.hpp"
#include "cbx/evaluation.hpp"
#include "cbx/log_io.hpp"
#include "cbx/survey.hpp"

namespace cbx {

namespace {

using nlohmann::json;

Response error(int status, const std::string& message) { return {status, {{"error", message}}}; }

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("malformed JSON: ") + e.what());
  }
}

std::vector<double> parse_context(const json& x, const ContextSchema& schema) {
  std::vector<double> out;
  if (x.is_array()) {
    if (x.size() != schema.size())
      throw ValidationError("context has " + std::to_string(x.size()) + " values, expected " + std::to_string(schema.size()));
    for (const auto& v : x) {
      if (!v.is_number()) throw ValidationError("context values must be numbers");
      out.push_back(v.get<double>());
    }
  } else if (x.is_object()) {
    out.assign(schema.size(), 0.0);
    std::vector<bool> seen(schema.size(), false);
    for (auto it = x.begin(); it != x.end(); ++it) {
      auto j = schema.index_of(it.key());
      if (!j) throw ValidationError("unknown feature '" + it.key() + "'");
      if (!it.value().is_number()) throw ValidationError("feature '" + it.key() + "' must be a number");
      out[*j] = it.value().get<double>();
      seen[*j] = true;
    }
    for (std::size_t j = 0; j < seen.size(); ++j)
      if (!seen[j]) throw ValidationError("missing feature '" + schema.feature(j).name + "'");
  } else {
    throw ValidationError("context must be an array or an object");
  }
  schema.validate_context(out);
  return out;
}

std::vector<double> row_vector(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(j)] = m(i, j);
  return v;
}

BanditConfig service_bandit(const ExperimentConfig& c) {
  BanditConfig b = c.bandit;
  b.seed = c.seed;
  b.batch_size = c.batch_size;
  return b;
}

Eigen::MatrixXd batch_propensities(const Experiment& exp, const Eigen::MatrixXd& ctx, int batch) {
  const int K = exp.log.arms().size();
  if (exp.phase == Phase::Learning) return propose_propensities(exp.log, ctx, service_bandit(exp.config), batch);
  return evaluation_mixture(ctx, exp.policy->contextual, exp.policy->fixed, exp.config.epsilon, K);
}

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Learning: return "learning";
    case Phase::Evaluation: return "evaluation";
    case Phase::Complete: return "complete";
  }
  return "?";
}

ExperimentStore::ExperimentStore(std::filesystem::path state_dir) : dir_(std::move(state_dir)) {
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir_))
    if (e.path().extension() == ".ndjson") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) replay(f);
}

ExperimentStore::Entry* ExperimentStore::find(const std::string& id) const {
  std::shared_lock lock(map_mu_);
  auto it = experiments_.find(id);
  return it == experiments_.end() ? nullptr : it->second.get();
}

void ExperimentStore::append_event(const Experiment& exp, const json& event) const {
  std::ofstream out(exp.event_log, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + exp.event_log.string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + exp.event_log.string());
}

void ExperimentStore::close_batch(Experiment& exp, bool persist) {
  auto& ob = *exp.open;
  std::int64_t t = static_cast<std::int64_t>(exp.log.size());
  for (auto& s : ob.subjects) {
    Observation obs;
    obs.t = ++t;
    obs.batch = ob.batch;
    obs.x = s.x;
    obs.arm = s.arm;
    obs.y = *s.y;
    obs.e = s.e;
    exp.log.append(std::move(obs));
  }
  exp.open.reset();
  if (exp.phase == Phase::Learning && exp.log.size() >= static_cast<std::size_t>(exp.config.learning_periods())) {
    if (persist) finish_learning(exp, true, nullptr);
  } else if (exp.phase == Phase::Evaluation && exp.log.size() >= static_cast<std::size_t>(exp.config.total_periods)) {
    exp.phase = Phase::Complete;
  }
}

void ExperimentStore::finish_learning(Experiment& exp, bool persist, const json* recorded_report) {
  exp.log.set_learning_rows(exp.log.size());
  json report;
  if (recorded_report) {
    report = *recorded_report;
  } else {
    const ObservationLog learning = exp.log.learning_phase();
    const BanditConfig bandit = service_bandit(exp.config);
    const auto ensemble = last_batch_ensemble(learning, bandit);
    const PipelineResult r = run_learning_pipeline(learning, ensemble, exp.config.pipeline);
    report = pipeline_report(r, exp.log.schema(), exp.log.arms(), exp.config.pipeline);
  }
  if (persist)
    append_event(exp, {{"v", kEventLogVersion}, {"type", "phase_transition"}, {"phase", "evaluation"}, {"report", report}});
  exp.policy = policy_report_from_json(report, exp.log.schema(), exp.log.arms());
  exp.phase = exp.log.size() >= static_cast<std::size_t>(exp.config.total_periods) ? Phase::Complete : Phase::Evaluation;
  std::atomic_store(&exp.report, std::make_shared<const json>(std::move(report)));
}

void ExperimentStore::replay(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::string line;
  auto entry = std::make_unique<Entry>();
  Experiment& exp = entry->exp;
  exp.event_log = file;
  bool created = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json ev;
    try {
      ev = json::parse(line);
    } catch (const json::parse_error&) {
      // a torn final write is dropped; anything earlier is corruption
      if (in.peek() == EOF) break;
      throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": corrupt event");
    }
    if (ev.value("v", 0) != kEventLogVersion)
      throw std::runtime_error(file.string() + ": unsupported event log version");
    const std::string type = ev.at("type");
    if (type == "created") {
      exp.id = ev.at("id");
      exp.idempotency_key = ev.value("idempotency_key", "");
      exp.config = experiment_config_from_json(ev.at("config"));
      exp.log = ObservationLog(schema_from_json(ev.at("schema")), ArmSet(ev.at("arms").get<std::vector<std::string>>()));
      created = true;
    } else if (!created) {
      throw std::runtime_error(file.string() + ": events before 'created'");
    } else if (type == "batch_opened") {
      Experiment::OpenBatch ob;
      ob.batch = ev.at("batch");
      exp.open = std::move(ob);
      exp.next_batch = exp.open->batch + 1;
    } else if (type == "assignment") {
      auto& ob = exp.open.value();
      Experiment::Subject s;
      s.id = ev.at("subject");
      s.x = ev.at("x").get<std::vector<double>>();
      s.arm = exp.log.arms().require(ev.at("arm"));
      s.e = ev.at("e").get<std::vector<double>>();
      ob.index[s.id] = ob.subjects.size();
      ob.subjects.push_back(std::move(s));
      ++ob.remaining;
    } else if (type == "outcome") {
      auto& ob = exp.open.value();
      ob.subjects.at(ob.index.at(ev.at("subject"))).y = ev.at("y").get<double>();
      if (--ob.remaining == 0) close_batch(exp, false);
    } else if (type == "phase_transition") {
      const json report = ev.at("report");
      finish_learning(exp, false, &report);
    } else {
      throw std::runtime_error(file.string() + ": unknown event type '" + type + "'");
    }
  }
  if (!created) return;
  // crash between the last outcome and the phase transition
  if (exp.phase == Phase::Learning && !exp.open &&
      exp.log.size() >= static_cast<std::size_t>(exp.config.learning_periods()))
    finish_learning(exp, true, nullptr);
  const std::string stem = file.stem().string();
  if (stem.size() > 1 && stem[0] == 'e') counter_ = std::max(counter_, std::stoi(stem.substr(1)));
  if (!exp.idempotency_key.empty()) by_key_[exp.idempotency_key] = exp.id;
  experiments_[exp.id] = std::move(entry);
}

Response ExperimentStore::create(const std::string& body, const std::string& idempotency_key) {
  std::unique_lock lock(map_mu_);
  if (!idempotency_key.empty()) {
    auto it = by_key_.find(idempotency_key);
    if (it != by_key_.end()) return {200, {{"id", it->second}}};
  }
  json j;
  ExperimentConfig config;
  ContextSchema schema = survey_schema();
  ArmSet arms = survey_arms();
  try {
    j = parse_body(body);
    if (!j.is_object()) throw ValidationError("body must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "config" && it.key() != "schema" && it.key() != "arms")
        throw ValidationError("unknown key '" + it.key() + "'");
    config = experiment_config_from_json(j.value("config", json::object()));
    if (j.contains("schema")) schema = schema_from_json(j["schema"]);
    if (j.contains("arms")) arms = ArmSet(j["arms"].get<std::vector<std::string>>());
    if (arms.size() < 2) throw ValidationError("need at least two arms");
  } catch (const std::exception& e) {
    return error(400, e.what());
  }
  auto entry = std::make_unique<Entry>();
  Experiment& exp = entry->exp;
  exp.id = "e" + std::to_string(++counter_);
  exp.idempotency_key = idempotency_key;
  exp.config = config;
  exp.log = ObservationLog(schema, arms);
  exp.event_log = dir_ / (exp.id + ".ndjson");
  append_event(exp, {{"v", kEventLogVersion},
                     {"type", "created"},
                     {"id", exp.id},
                     {"idempotency_key", idempotency_key},
                     {"config", experiment_config_to_json(config)},
                     {"schema", schema_to_json(schema)},
                     {"arms", arms.aliases()}});
  if (!idempotency_key.empty()) by_key_[idempotency_key] = exp.id;
  const std::string id = exp.id;
  experiments_[id] = std::move(entry);
  return {201, {{"id", id}}};
}

Eigen::MatrixXd ExperimentStore::preview_propensities(const std::string& id, const Eigen::MatrixXd& contexts) const {
  Entry* e = find(id);
  if (!e) throw ValidationError("unknown experiment '" + id + "'");
  std::lock_guard lock(e->mu);
  return batch_propensities(e->exp, contexts, e->exp.next_batch);
}

Response ExperimentStore::open_batch(const std::string& id, const std::string& body) {
  Entry* entry = find(id);
  if (!entry) return error(404, "unknown experiment '" + id + "'");
  std::lock_guard lock(entry->mu);
  Experiment& exp = entry->exp;
  if (exp.open) return error(409, "batch " + std::to_string(exp.open->batch) + " is still open");
  if (exp.phase == Phase::Complete) return error(409, "experiment is complete");
  json j;
  try {
    j = parse_body(body);
  } catch (const std::exception& e) {
    return error(400, e.what());
  }
  const json items = j.is_object() ? j.value("contexts", json()) : j;
  if (!items.is_array() || items.empty()) return error(422, "expected a non-empty 'contexts' array");
  const int batch = exp.next_batch;
  const auto p = static_cast<Eigen::Index>(exp.log.schema().size());
  Eigen::MatrixXd ctx(static_cast<Eigen::Index>(items.size()), p);
  std::vector<std::string> ids;
  std::set<std::string> seen;
  try {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const json& item = items[i];
      std::string sid = "b" + std::to_string(batch) + "-" + std::to_string(i);
      const json* x = &item;
      if (item.is_object() && item.contains("x")) {
        if (item.contains("subject")) sid = item["subject"].is_string() ? item["subject"].get<std::string>() : item["subject"].dump();
        x = &item["x"];
      }
      if (!seen.insert(sid).second) throw ValidationError("duplicate subject '" + sid + "'");
      const auto v = parse_context(*x, exp.log.schema());
      for (Eigen::Index c = 0; c < p; ++c) ctx(static_cast<Eigen::Index>(i), c) = v[static_cast<std::size_t>(c)];
      ids.push_back(sid);
    }
  } catch (const ValidationError& e) {
    return error(422, std::string("context ") + std::to_string(ids.size()) + ": " + e.what());
  }

  const Eigen::MatrixXd e = batch_propensities(exp, ctx, batch);
  Rng rng = make_rng(exp.config.seed, Purpose::Service, {static_cast<std::uint64_t>(batch)});
  const auto arms = sample_arms(e, rng);

  Experiment::OpenBatch ob;
  ob.batch = batch;
  std::string events = json{{"v", kEventLogVersion}, {"type", "batch_opened"}, {"batch", batch}, {"subjects", ids.size()}}.dump() + "\n";
  json assignments = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Experiment::Subject s;
    s.id = ids[i];
    s.x = row_vector(ctx, static_cast<Eigen::Index>(i));
    s.arm = arms[i];
    s.e = row_vector(e, static_cast<Eigen::Index>(i));
    const std::string alias = exp.log.arms().alias(s.arm);
    events += json{{"v", kEventLogVersion}, {"type", "assignment"}, {"batch", batch}, {"subject", s.id},
                   {"x", s.x}, {"arm", alias}, {"e", s.e}}.dump() + "\n";
    assignments.push_back({{"subject", s.id}, {"arm", alias}, {"propensities", s.e}});
    ob.index[s.id] = i;
    ob.subjects.push_back(std::move(s));
  }
  ob.remaining = ob.subjects.size();
  {
    std::ofstream out(exp.event_log, std::ios::app);
    out << events;
    out.flush();
    if (!out) return error(500, "cannot persist batch");
  }
  exp.open = std::move(ob);
  exp.next_batch = batch + 1;
  return {200, {{"batch", batch}, {"phase", to_string(exp.phase)}, {"arms", exp.log.arms().aliases()}, {"assignments", assignments}}};
}

Response ExperimentStore::submit_outcomes(const std::string& id, int batch, const std::string& body) {
  Entry* entry = find(id);
  if (!entry) return error(404, "unknown experiment '" + id + "'");
  std::lock_guard lock(entry->mu);
  Experiment& exp = entry->exp;
  if (batch < 0 || batch >= exp.next_batch) return error(404, "unknown batch " + std::to_string(batch));
  if (!exp.open || exp.open->batch != batch) return error(409, "batch " + std::to_string(batch) + " is closed");
  json j;
  try {
    j = parse_body(body);
  } catch (const std::exception& e) {
    return error(400, e.what());
  }
  const json items = j.is_object() && j.contains("outcomes") ? j["outcomes"] : j;
  std::vector<std::pair<std::string, double>> pairs;
  if (items.is_object()) {
    for (auto it = items.begin(); it != items.end(); ++it) {
      if (!it.value().is_number()) return error(422, "outcome for '" + it.key() + "' must be a number");
      pairs.emplace_back(it.key(), it.value().get<double>());
    }
  } else if (items.is_array()) {
    for (const auto& o : items) {
      if (!o.is_object() || !o.contains("subject") || !o.contains("outcome") || !o["outcome"].is_number())
        return error(422, "each outcome needs 'subject' and numeric 'outcome'");
      const std::string sid = o["subject"].is_string() ? o["subject"].get<std::string>() : o["subject"].dump();
      pairs.emplace_back(sid, o["outcome"].get<double>());
    }
  } else {
    return error(422, "expected 'outcomes' as an object or array");
  }
  if (pairs.empty()) return error(422, "no outcomes");

  auto& ob = *exp.open;
  std::set<std::string> seen;
  for (const auto& [sid, y] : pairs) {
    auto it = ob.index.find(sid);
    if (it == ob.index.end()) return error(404, "unknown subject '" + sid + "'");
    if (ob.subjects[it->second].y || !seen.insert(sid).second) return error(409, "outcome for '" + sid + "' already submitted");
    try {
      exp.log.schema().validate_outcome(y);
    } catch (const ValidationError& e) {
      return error(422, "subject '" + sid + "': " + e.what());
    }
  }
  std::string events;
  for (const auto& [sid, y] : pairs)
    events += json{{"v", kEventLogVersion}, {"type", "outcome"}, {"batch", batch}, {"subject", sid}, {"y", y}}.dump() + "\n";
  {
    std::ofstream out(exp.event_log, std::ios::app);
    out << events;
    out.flush();
    if (!out) return error(500, "cannot persist outcomes");
  }
  for (const auto& [sid, y] : pairs) ob.subjects[ob.index.at(sid)].y = y;
  ob.remaining -= pairs.size();
  const std::size_t remaining = ob.remaining;
  if (remaining == 0) {
    try {
      close_batch(exp, true);
    } catch (const std::exception& e) {
      return error(500, std::string("policy learning failed: ") + e.what());
    }
  }
  return {200, {{"batch", batch}, {"remaining", remaining}, {"closed", remaining == 0}, {"phase", to_string(exp.phase)}}};
}

Response ExperimentStore::policy(const std::string& id) const {
  Entry* entry = find(id);
  if (!entry) return error(404, "unknown experiment '" + id + "'");
  auto report = std::atomic_load(&entry->exp.report);
  if (!report) return error(409, "experiment is still in the learning phase");
  return {200, *report};
}

Response ExperimentStore::status(const std::string& id) const {
  Entry* entry = find(id);
  if (!entry) return error(404, "unknown experiment '" + id + "'");
  std::lock_guard lock(entry->mu);
  const Experiment& exp = entry->exp;
  json j{{"id", exp.id},
         {"phase", to_string(exp.phase)},
         {"rows", exp.log.size()},
         {"next_batch", exp.next_batch},
         {"learning_periods", exp.config.learning_periods()},
         {"total_periods", exp.config.total_periods},
         {"arms", exp.log.arms().aliases()}};
  j["open_batch"] = exp.open ? json(exp.open->batch) : json(nullptr);
  return {200, j};
}

void serve(ExperimentStore& store, const std::string& host, int port) {
  httplib::Server svr;
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  svr.Post("/experiments", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, store.create(req.body, req.get_header_value("Idempotency-Key")));
  });
  svr.Post(R"(/experiments/([^/]+)/batches)", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, store.open_batch(req.matches[1], req.body));
  });
  svr.Post(R"(/experiments/([^/]+)/batches/(\d+)/outcomes)", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, store.submit_outcomes(req.matches[1], std::stoi(req.matches[2]), req.body));
  });
  svr.Get(R"(/experiments/([^/]+)/policy)", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, store.policy(req.matches[1]));
  });
  svr.Get(R"(/experiments/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, store.status(req.matches[1]));
  });
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    }
    res.status = 500;
    res.set_content(json{{"error", what}}.dump(), "application/json");
  });
  if (!svr.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace cbx
