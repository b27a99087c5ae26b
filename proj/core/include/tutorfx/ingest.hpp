#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tutorfx/model.hpp"

namespace tfx {

enum class LogFormat { Csv, Jsonl };

struct IngestOptions {
  /// Fail on the first malformed row. When false, such rows are dropped and counted.
  bool strict = true;
  std::string source = "stream";
};

/// Parses an event stream. Required columns: student_id, timestamp, problem_id,
/// skill_id, correct. Optional: tutored, session_id. Any other column is kept in
/// InteractionEvent::extras. Rows identical in (student, timestamp, problem,
/// correct) collapse to one; a conflicting correctness value is a DuplicateEvent.
EventLog ingest_events(std::istream& source, LogFormat format, const IngestOptions& options = {});

std::map<std::string, SessionMeta> ingest_sessions(std::istream& source);
std::map<std::string, StudentContext> ingest_context(std::istream& source);

void emit_events(std::ostream& out, const EventLog& log, LogFormat format);
void emit_sessions(std::ostream& out, const std::map<std::string, SessionMeta>& sessions);
void emit_context(std::ostream& out, const std::map<std::string, StudentContext>& context);

/// Accepts 0/1/true/false in any letter case; anything else is nullopt.
std::optional<bool> parse_bool(std::string_view text);

enum class ViolationKind { OrphanSession, NonMonotoneTimestamp, ShortSequence, TutoredWithoutSession };

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string student_id;
  std::int64_t seq_index = -1;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::size_t n_students = 0;
  std::size_t n_events = 0;

  bool clean() const { return violations.empty(); }
  std::size_t count(ViolationKind kind) const;
  nlohmann::json to_json() const;
};

/// Diagnostic pass; never throws and never mutates the log.
ValidationReport validate_log(const EventLog& log);

}  // namespace tfx
