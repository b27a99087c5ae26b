#include "tutorfx/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>
#include <tuple>

#include "tutorfx/csv.hpp"
#include "tutorfx/error.hpp"

namespace tfx {

// ---------------------------------------------------------------------------
// EventLog

EventLog EventLog::build(std::vector<InteractionEvent> events,
                         std::map<std::string, SessionMeta> sessions,
                         std::map<std::string, StudentContext> context,
                         Provenance provenance) {
  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = events[a];
    const auto& y = events[b];
    return std::tie(x.student_id, x.timestamp, x.problem_id) <
           std::tie(y.student_id, y.timestamp, y.problem_id);
  });

  EventLog log;
  log.events_.reserve(events.size());
  for (std::size_t idx : order) log.events_.push_back(std::move(events[idx]));

  std::size_t i = 0;
  while (i < log.events_.size()) {
    std::size_t j = i;
    const std::string& id = log.events_[i].student_id;
    while (j < log.events_.size() && log.events_[j].student_id == id) {
      log.events_[j].seq_index = static_cast<std::int64_t>(j - i);
      ++j;
    }
    log.student_index_.emplace(id, log.students_.size());
    log.students_.push_back({id, i, j});
    i = j;
  }
  log.sessions_ = std::move(sessions);
  log.context_ = std::move(context);
  log.provenance_ = std::move(provenance);
  return log;
}

std::span<const InteractionEvent> EventLog::student_events(std::size_t student_index) const {
  const auto& s = students_.at(student_index);
  return std::span<const InteractionEvent>(events_.data() + s.begin, s.size());
}

std::optional<std::size_t> EventLog::find_student(const std::string& student_id) const {
  auto it = student_index_.find(student_id);
  if (it == student_index_.end()) return std::nullopt;
  return it->second;
}

const InteractionEvent& EventLog::at(const std::string& student_id, std::int64_t seq_index) const {
  auto idx = find_student(student_id);
  if (!idx) throw Error(ErrorCode::MalformedRecord, "unknown student " + student_id);
  auto span = student_events(*idx);
  if (seq_index < 0 || static_cast<std::size_t>(seq_index) >= span.size()) {
    throw Error(ErrorCode::MalformedRecord,
                "seq_index " + std::to_string(seq_index) + " out of range for " + student_id);
  }
  return span[static_cast<std::size_t>(seq_index)];
}

EventLog EventLog::subset(const std::vector<std::string>& student_ids) const {
  std::vector<std::string> ids = student_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<InteractionEvent> kept;
  std::map<std::string, SessionMeta> sessions;
  std::map<std::string, StudentContext> context;
  for (const auto& id : ids) {
    auto idx = find_student(id);
    if (!idx) continue;
    for (const auto& ev : student_events(*idx)) {
      kept.push_back(ev);
      if (ev.session_id) {
        auto it = sessions_.find(*ev.session_id);
        if (it != sessions_.end()) sessions.insert(*it);
      }
    }
    auto ctx = context_.find(id);
    if (ctx != context_.end()) context.insert(*ctx);
  }
  Provenance prov = provenance_;
  prov.source += " [subset]";
  prov.counts = {kept.size(), kept.size(), 0, 0};
  return build(std::move(kept), std::move(sessions), std::move(context), std::move(prov));
}

EventLog EventLog::with_context(std::map<std::string, StudentContext> context) const {
  EventLog copy = *this;
  copy.context_ = std::move(context);
  return copy;
}

// ---------------------------------------------------------------------------
// parsing helpers

std::optional<bool> parse_bool(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "1" || lower == "true") return true;
  if (lower == "0" || lower == "false") return false;
  return std::nullopt;
}

namespace {

std::optional<std::int64_t> parse_int(std::string_view text) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::optional<double> parse_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::string s(text);
  std::size_t pos = 0;
  try {
    double v = std::stod(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

[[noreturn]] void malformed(std::size_t line, const std::string& reason) {
  throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line) + ": " + reason);
}

const std::vector<std::string> kRequired = {"student_id", "timestamp", "problem_id", "skill_id",
                                            "correct"};
const std::vector<std::string> kKnown = {"student_id", "seq_index", "timestamp", "problem_id",
                                         "skill_id",   "correct",   "tutored",   "session_id"};

bool is_known(const std::string& key) {
  return std::find(kKnown.begin(), kKnown.end(), key) != kKnown.end();
}

// Field map for one record; values are raw strings, absent keys are missing.
using RawRecord = std::map<std::string, std::optional<std::string>>;

InteractionEvent to_event(const RawRecord& raw, std::size_t line) {
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = raw.find(key);
    if (it == raw.end()) return std::nullopt;
    return it->second;
  };
  InteractionEvent ev;
  for (const auto& key : kRequired) {
    auto v = get(key);
    if (!v || v->empty()) malformed(line, "missing required field '" + key + "'");
  }
  ev.student_id = *get("student_id");
  ev.problem_id = *get("problem_id");
  ev.skill_id = *get("skill_id");
  auto ts = parse_int(*get("timestamp"));
  if (!ts) malformed(line, "timestamp '" + *get("timestamp") + "' is not an integer");
  ev.timestamp = *ts;
  auto correct = parse_bool(*get("correct"));
  if (!correct) malformed(line, "correct='" + *get("correct") + "' is not a boolean");
  ev.correct = *correct;
  if (auto t = get("tutored"); t && !t->empty()) {
    auto tutored = parse_bool(*t);
    if (!tutored) malformed(line, "tutored='" + *t + "' is not a boolean");
    ev.tutored = *tutored;
  }
  if (auto s = get("session_id"); s && !s->empty()) ev.session_id = *s;
  if (ev.tutored && !ev.session_id) malformed(line, "tutored attempt without session_id");
  for (const auto& [key, value] : raw) {
    if (!is_known(key) && value) ev.extras[key] = *value;
  }
  return ev;
}

std::string json_scalar_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  return v.dump();
}

}  // namespace

// ---------------------------------------------------------------------------
// events

EventLog ingest_events(std::istream& source, LogFormat format, const IngestOptions& options) {
  struct Pending {
    InteractionEvent event;
    std::size_t line;
  };
  std::vector<Pending> rows;
  IngestCounts counts;

  auto accept = [&](const RawRecord& raw, std::size_t line) {
    ++counts.input_rows;
    try {
      rows.push_back({to_event(raw, line), line});
    } catch (const Error&) {
      if (options.strict) throw;
      ++counts.dropped_malformed;
    }
  };

  if (format == LogFormat::Csv) {
    csv::Reader reader(source);
    auto header = reader.next();
    if (!header) throw Error(ErrorCode::MalformedRecord, "line 1: missing header row");
    for (const auto& key : kRequired) {
      if (std::find(header->begin(), header->end(), key) == header->end()) {
        throw Error(ErrorCode::MalformedRecord, "line 1: header lacks required column '" + key + "'");
      }
    }
    while (auto record = reader.next()) {
      if (record->size() == 1 && record->front().empty()) continue;  // blank line
      const std::size_t line = reader.record_line();
      if (record->size() != header->size()) {
        ++counts.input_rows;
        if (options.strict) {
          malformed(line, "expected " + std::to_string(header->size()) + " fields, got " +
                              std::to_string(record->size()));
        }
        ++counts.dropped_malformed;
        continue;
      }
      RawRecord raw;
      for (std::size_t i = 0; i < header->size(); ++i) raw[(*header)[i]] = (*record)[i];
      accept(raw, line);
    }
  } else {
    std::string text;
    std::size_t line = 0;
    while (std::getline(source, text)) {
      ++line;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        ++counts.input_rows;
        if (options.strict) malformed(line, std::string("invalid JSON: ") + e.what());
        ++counts.dropped_malformed;
        continue;
      }
      if (!obj.is_object()) {
        ++counts.input_rows;
        if (options.strict) malformed(line, "expected a JSON object");
        ++counts.dropped_malformed;
        continue;
      }
      RawRecord raw;
      for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (it.value().is_null()) {
          raw[it.key()] = std::nullopt;
        } else {
          raw[it.key()] = json_scalar_to_string(it.value());
        }
      }
      accept(raw, line);
    }
  }

  // Deduplicate on (student, timestamp, problem); conflicting correctness is fatal.
  std::map<std::tuple<std::string, std::int64_t, std::string>, std::size_t> seen;
  std::vector<InteractionEvent> kept;
  kept.reserve(rows.size());
  for (auto& row : rows) {
    auto key = std::make_tuple(row.event.student_id, row.event.timestamp, row.event.problem_id);
    auto [it, inserted] = seen.emplace(key, kept.size());
    if (!inserted) {
      const auto& first = kept[it->second];
      if (first.correct != row.event.correct) {
        throw Error(ErrorCode::DuplicateEvent,
                    "line " + std::to_string(row.line) + ": student " + row.event.student_id +
                        " problem " + row.event.problem_id + " at " +
                        std::to_string(row.event.timestamp) + " has conflicting correctness");
      }
      ++counts.deduplicated;
      continue;
    }
    kept.push_back(std::move(row.event));
  }
  counts.kept = kept.size();
  return EventLog::build(std::move(kept), {}, {}, Provenance{options.source, counts});
}

void emit_events(std::ostream& out, const EventLog& log, LogFormat format) {
  std::vector<std::string> extra_keys;
  for (const auto& ev : log.events()) {
    for (const auto& [k, v] : ev.extras) {
      if (std::find(extra_keys.begin(), extra_keys.end(), k) == extra_keys.end()) {
        extra_keys.push_back(k);
      }
    }
  }
  std::sort(extra_keys.begin(), extra_keys.end());

  if (format == LogFormat::Csv) {
    std::vector<std::string> header = kKnown;
    header.insert(header.end(), extra_keys.begin(), extra_keys.end());
    csv::write_row(out, header);
    for (const auto& ev : log.events()) {
      std::vector<std::string> f = {ev.student_id,
                                    std::to_string(ev.seq_index),
                                    std::to_string(ev.timestamp),
                                    ev.problem_id,
                                    ev.skill_id,
                                    ev.correct ? "1" : "0",
                                    ev.tutored ? "1" : "0",
                                    ev.session_id.value_or("")};
      for (const auto& k : extra_keys) {
        auto it = ev.extras.find(k);
        f.push_back(it == ev.extras.end() ? "" : it->second);
      }
      csv::write_row(out, f);
    }
    return;
  }
  for (const auto& ev : log.events()) {
    nlohmann::ordered_json obj;
    obj["student_id"] = ev.student_id;
    obj["seq_index"] = ev.seq_index;
    obj["timestamp"] = ev.timestamp;
    obj["problem_id"] = ev.problem_id;
    obj["skill_id"] = ev.skill_id;
    obj["correct"] = ev.correct;
    obj["tutored"] = ev.tutored;
    obj["session_id"] = ev.session_id ? nlohmann::ordered_json(*ev.session_id) : nlohmann::ordered_json(nullptr);
    for (const auto& [k, v] : ev.extras) obj[k] = v;
    out << obj.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// sessions and context tables

namespace {

std::vector<std::map<std::string, std::string>> read_table(std::istream& source,
                                                           const std::vector<std::string>& required) {
  csv::Reader reader(source);
  auto header = reader.next();
  if (!header) throw Error(ErrorCode::MalformedRecord, "line 1: missing header row");
  for (const auto& key : required) {
    if (std::find(header->begin(), header->end(), key) == header->end()) {
      throw Error(ErrorCode::MalformedRecord, "line 1: header lacks required column '" + key + "'");
    }
  }
  std::vector<std::map<std::string, std::string>> table;
  while (auto record = reader.next()) {
    if (record->size() == 1 && record->front().empty()) continue;
    if (record->size() != header->size()) {
      malformed(reader.record_line(), "field count does not match header");
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header->size(); ++i) row[(*header)[i]] = (*record)[i];
    row["__line"] = std::to_string(reader.record_line());
    table.push_back(std::move(row));
  }
  return table;
}

std::int64_t require_int(const std::map<std::string, std::string>& row, const std::string& key) {
  auto v = parse_int(row.at(key));
  if (!v || *v < 0) malformed(std::stoul(row.at("__line")), key + " must be a nonnegative integer");
  return *v;
}

double require_double(const std::map<std::string, std::string>& row, const std::string& key) {
  auto v = parse_double(row.at(key));
  if (!v) malformed(std::stoul(row.at("__line")), key + " must be a number");
  return *v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, SessionMeta> ingest_sessions(std::istream& source) {
  const std::vector<std::string> cols = {"session_id",       "messages_total",     "tutor_messages",
                                         "student_messages", "duration_minutes",   "student_word_share",
                                         "prior_session_count"};
  std::map<std::string, SessionMeta> out;
  for (const auto& row : read_table(source, cols)) {
    const std::size_t line = std::stoul(row.at("__line"));
    SessionMeta s;
    s.session_id = row.at("session_id");
    s.messages_total = require_int(row, "messages_total");
    s.tutor_messages = require_int(row, "tutor_messages");
    s.student_messages = require_int(row, "student_messages");
    s.duration_minutes = require_double(row, "duration_minutes");
    s.student_word_share = require_double(row, "student_word_share");
    s.prior_session_count = require_int(row, "prior_session_count");
    if (s.tutor_messages + s.student_messages != s.messages_total) {
      malformed(line, "tutor_messages + student_messages != messages_total");
    }
    if (s.student_word_share < 0.0 || s.student_word_share > 1.0) {
      malformed(line, "student_word_share outside [0,1]");
    }
    if (s.duration_minutes < 0.0) malformed(line, "negative duration_minutes");
    out[s.session_id] = s;
  }
  return out;
}

std::map<std::string, StudentContext> ingest_context(std::istream& source) {
  std::map<std::string, StudentContext> out;
  for (const auto& row : read_table(source, {"student_id"})) {
    const std::size_t line = std::stoul(row.at("__line"));
    StudentContext c;
    c.student_id = row.at("student_id");
    auto field = [&](const std::string& key) -> std::string {
      auto it = row.find(key);
      return it == row.end() ? std::string() : it->second;
    };
    if (auto v = field("pretest_score"); !v.empty()) {
      auto d = parse_double(v);
      if (!d) malformed(line, "pretest_score must be a number");
      c.pretest_score = d;
    }
    if (auto v = field("gender"); !v.empty()) {
      if (v == "A") c.gender = Gender::A;
      else if (v == "B") c.gender = Gender::B;
      else if (v == "C") c.gender = Gender::C;
      else malformed(line, "gender must be one of A, B, C");
    }
    if (auto v = field("low_ses_flag"); !v.empty()) {
      auto b = parse_bool(v);
      if (!b) malformed(line, "low_ses_flag is not a boolean");
      c.low_ses_flag = b;
    }
    if (auto v = field("school_id"); !v.empty()) c.school_id = v;
    out[c.student_id] = c;
  }
  return out;
}

void emit_sessions(std::ostream& out, const std::map<std::string, SessionMeta>& sessions) {
  csv::write_row(out, {"session_id", "messages_total", "tutor_messages", "student_messages",
                       "duration_minutes", "student_word_share", "prior_session_count"});
  for (const auto& [id, s] : sessions) {
    csv::write_row(out, {s.session_id, std::to_string(s.messages_total),
                         std::to_string(s.tutor_messages), std::to_string(s.student_messages),
                         format_double(s.duration_minutes), format_double(s.student_word_share),
                         std::to_string(s.prior_session_count)});
  }
}

void emit_context(std::ostream& out, const std::map<std::string, StudentContext>& context) {
  csv::write_row(out, {"student_id", "pretest_score", "gender", "low_ses_flag", "school_id"});
  for (const auto& [id, c] : context) {
    std::string gender;
    if (c.gender) gender = *c.gender == Gender::A ? "A" : *c.gender == Gender::B ? "B" : "C";
    csv::write_row(out, {c.student_id, c.pretest_score ? format_double(*c.pretest_score) : "",
                         gender, c.low_ses_flag ? (*c.low_ses_flag ? "1" : "0") : "",
                         c.school_id.value_or("")});
  }
}

// ---------------------------------------------------------------------------
// validation

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::OrphanSession: return "OrphanSession";
    case ViolationKind::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
    case ViolationKind::ShortSequence: return "ShortSequence";
    case ViolationKind::TutoredWithoutSession: return "TutoredWithoutSession";
  }
  return "Unknown";
}

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; }));
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json j;
  j["n_students"] = n_students;
  j["n_events"] = n_events;
  j["clean"] = clean();
  j["violations"] = nlohmann::json::array();
  for (const auto& v : violations) {
    j["violations"].push_back({{"kind", std::string(to_string(v.kind))},
                               {"student_id", v.student_id},
                               {"seq_index", v.seq_index},
                               {"detail", v.detail}});
  }
  return j;
}

ValidationReport validate_log(const EventLog& log) {
  ValidationReport report;
  report.n_students = log.students().size();
  report.n_events = log.size();
  for (std::size_t s = 0; s < log.students().size(); ++s) {
    auto events = log.student_events(s);
    const auto& id = log.students()[s].student_id;
    if (events.size() < 2) {
      report.violations.push_back({ViolationKind::ShortSequence, id, -1,
                                   std::to_string(events.size()) + " event(s)"});
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& ev = events[i];
      if (i > 0 && ev.timestamp < events[i - 1].timestamp) {
        report.violations.push_back({ViolationKind::NonMonotoneTimestamp, id, ev.seq_index,
                                     "timestamp decreases"});
      }
      if (ev.tutored && !ev.session_id) {
        report.violations.push_back({ViolationKind::TutoredWithoutSession, id, ev.seq_index, ""});
      }
      if (ev.session_id && !log.sessions().contains(*ev.session_id)) {
        report.violations.push_back(
            {ViolationKind::OrphanSession, id, ev.seq_index, "session " + *ev.session_id});
      }
    }
  }
  return report;
}

}  // namespace tfx
