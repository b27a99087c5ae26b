#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tutorfx/ingest.hpp"
#include "tutorfx/model.hpp"
#include "tutorfx/sampler.hpp"

namespace tfx {

nlohmann::ordered_json row_to_json(const AnalyticRow& row);
AnalyticRow row_from_json(const nlohmann::json& j);

void write_rows(const std::filesystem::path& path, const AnalyticRows& rows);
/// Throws MissingUpstreamArtifact when absent, MalformedRecord on bad lines.
AnalyticRows read_rows(const std::filesystem::path& path);

struct LogFiles {
  std::filesystem::path events;  // .jsonl is read as JSON lines, anything else as CSV
  std::optional<std::filesystem::path> sessions;
  std::optional<std::filesystem::path> context;
};

EventLog load_log(const LogFiles& files, const IngestOptions& options = {});
/// Writes events.csv, sessions.csv and context.csv into `dir`.
LogFiles save_log(const std::filesystem::path& dir, const EventLog& log);

/// Writes the file, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace tfx
