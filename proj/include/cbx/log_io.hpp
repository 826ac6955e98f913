#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cbx/core_types.hpp"

namespace cbx {

// Columnar CSV: t, batch, <features...>, arm (alias), outcome, e_1..e_K.
// The sidecar carries schema, arm set, learning-phase marker and metadata.
// Numbers use shortest round-trip formatting, so write -> read is exact.
std::string log_to_csv(const ObservationLog& log);
nlohmann::json log_sidecar(const ObservationLog& log);
ObservationLog log_from_csv(const std::string& csv_text, const nlohmann::json& sidecar);

nlohmann::json schema_to_json(const ContextSchema& schema);
ContextSchema schema_from_json(const nlohmann::json& j);

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
void write_log(const ObservationLog& log, const std::filesystem::path& csv_path);
ObservationLog read_log(const std::filesystem::path& csv_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cbx
