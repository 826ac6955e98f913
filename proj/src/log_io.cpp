#include "cbx/log_io.hpp"

#include <fstream>
#include <sstream>

#include "cbx/csv.hpp"
#include "cbx/errors.hpp"

namespace cbx {

namespace {

constexpr const char* kFormat = "cbx-observation-log";
constexpr int kVersion = 1;

}  // namespace

nlohmann::json schema_to_json(const ContextSchema& schema) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : schema.features())
    features.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"range", {f.lo, f.hi}}});
  return {{"features", features}, {"outcome_range", {schema.outcome_lo(), schema.outcome_hi()}}};
}

ContextSchema schema_from_json(const nlohmann::json& j) {
  std::vector<FeatureSpec> features;
  for (const auto& f : j.at("features")) {
    features.push_back(FeatureSpec{f.at("name").get<std::string>(),
                                   feature_kind_from_string(f.at("kind").get<std::string>()),
                                   f.at("range").at(0).get<double>(), f.at("range").at(1).get<double>()});
  }
  const auto& r = j.at("outcome_range");
  return ContextSchema(std::move(features), r.at(0).get<double>(), r.at(1).get<double>());
}

std::string log_to_csv(const ObservationLog& log) {
  std::ostringstream out;
  csv::Row header{"t", "batch"};
  for (const auto& f : log.schema().features()) header.push_back(f.name);
  header.push_back("arm");
  header.push_back("outcome");
  for (int w = 0; w < log.arms().size(); ++w) header.push_back("e_" + std::to_string(w + 1));
  out << csv::join(header) << '\n';
  for (const auto& r : log.rows()) {
    csv::Row fields{std::to_string(r.t), std::to_string(r.batch)};
    for (double v : r.x) fields.push_back(csv::format_double(v));
    fields.push_back(log.arms().alias(r.arm));
    fields.push_back(csv::format_double(r.y));
    for (double p : r.e) fields.push_back(csv::format_double(p));
    out << csv::join(fields) << '\n';
  }
  return out.str();
}

nlohmann::json log_sidecar(const ObservationLog& log) {
  nlohmann::json j = schema_to_json(log.schema());
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["arms"] = log.arms().aliases();
  j["learning_rows"] = log.learning_rows() ? nlohmann::json(*log.learning_rows()) : nlohmann::json(nullptr);
  j["metadata"] = log.metadata();
  return j;
}

ObservationLog log_from_csv(const std::string& csv_text, const nlohmann::json& sidecar) {
  if (sidecar.value("format", std::string()) != kFormat)
    throw ValidationError("sidecar is not a cbx observation log description");
  if (sidecar.value("version", 0) != kVersion) throw ValidationError("unsupported observation log version");
  ObservationLog log(schema_from_json(sidecar), ArmSet(sidecar.at("arms").get<std::vector<std::string>>()));
  if (sidecar.contains("metadata")) log.set_metadata(sidecar.at("metadata"));

  const auto rows = csv::parse(csv_text);
  if (rows.empty()) throw ValidationError("observation log CSV is empty");
  const std::size_t p = log.schema().size();
  const int k = log.arms().size();
  csv::Row expected{"t", "batch"};
  for (const auto& f : log.schema().features()) expected.push_back(f.name);
  expected.push_back("arm");
  expected.push_back("outcome");
  for (int w = 0; w < k; ++w) expected.push_back("e_" + std::to_string(w + 1));
  if (rows[0] != expected) throw ValidationError("observation log CSV header does not match the sidecar schema");

  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != expected.size())
      throw RowError(i - 1, "expected " + std::to_string(expected.size()) + " fields");
    Observation obs;
    obs.t = csv::parse_int(f[0]);
    obs.batch = static_cast<int>(csv::parse_int(f[1]));
    for (std::size_t j = 0; j < p; ++j) obs.x.push_back(csv::parse_double(f[2 + j]));
    obs.arm = log.arms().require(f[2 + p]);
    obs.y = csv::parse_double(f[3 + p]);
    for (int w = 0; w < k; ++w) obs.e.push_back(csv::parse_double(f[4 + p + static_cast<std::size_t>(w)]));
    log.append(std::move(obs));
  }
  if (sidecar.contains("learning_rows") && !sidecar.at("learning_rows").is_null())
    log.set_learning_rows(sidecar.at("learning_rows").get<std::size_t>());
  return log;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  return std::filesystem::path(csv_path.string() + ".json");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_log(const ObservationLog& log, const std::filesystem::path& csv_path) {
  write_text_file(csv_path, log_to_csv(log));
  write_text_file(sidecar_path(csv_path), log_sidecar(log).dump(2) + "\n");
}

ObservationLog read_log(const std::filesystem::path& csv_path) {
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(read_text_file(sidecar_path(csv_path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed log sidecar: ") + e.what());
  }
  return log_from_csv(read_text_file(csv_path), sidecar);
}

}  // namespace cbx
