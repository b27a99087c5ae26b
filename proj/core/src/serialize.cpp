#include "tutorfx/serialize.hpp"

#include <fstream>
#include <sstream>

#include "tutorfx/error.hpp"

namespace tfx {

namespace {

template <typename T>
nlohmann::ordered_json opt(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <typename T>
std::optional<T> read_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::ordered_json row_to_json(const AnalyticRow& r) {
  nlohmann::ordered_json j;
  j["unit_id"] = r.unit_id;
  j["student_id"] = r.student_id;
  j["anchor_seq"] = r.anchor_seq;
  j["anchor_problem"] = r.anchor_problem;
  j["anchor_skill"] = r.anchor_skill;
  j["z"] = r.z;
  j["y_next"] = opt(r.y_next);
  j["y_next_seq"] = opt(r.y_next_seq);
  j["y_next_skill"] = opt(r.y_next_skill);
  j["y_skill"] = opt(r.y_skill);
  j["y_skill_seq"] = opt(r.y_skill_seq);
  j["y_placebo"] = opt(r.y_placebo);
  j["washout_admitted"] = r.washout_admitted;
  if (r.session) {
    const auto& s = *r.session;
    j["session"] = {{"session_id", s.session_id},
                    {"messages_total", s.messages_total},
                    {"tutor_messages", s.tutor_messages},
                    {"student_messages", s.student_messages},
                    {"duration_minutes", s.duration_minutes},
                    {"student_word_share", s.student_word_share},
                    {"prior_session_count", s.prior_session_count}};
  } else {
    j["session"] = nullptr;
  }
  if (r.features) {
    const auto& f = *r.features;
    j["features"] = {{"p_current", f.p_current}, {"p_next", f.p_next}, {"cum_accuracy", f.cum_accuracy}, {"h", f.h}};
  } else {
    j["features"] = nullptr;
  }
  return j;
}

AnalyticRow row_from_json(const nlohmann::json& j) {
  AnalyticRow r;
  r.unit_id = j.at("unit_id").get<std::string>();
  r.student_id = j.at("student_id").get<std::string>();
  r.anchor_seq = j.at("anchor_seq").get<std::int64_t>();
  r.anchor_problem = j.at("anchor_problem").get<std::string>();
  r.anchor_skill = j.at("anchor_skill").get<std::string>();
  r.z = j.at("z").get<int>();
  r.y_next = read_opt<bool>(j, "y_next");
  r.y_next_seq = read_opt<std::int64_t>(j, "y_next_seq");
  r.y_next_skill = read_opt<std::string>(j, "y_next_skill");
  r.y_skill = read_opt<bool>(j, "y_skill");
  r.y_skill_seq = read_opt<std::int64_t>(j, "y_skill_seq");
  r.y_placebo = read_opt<bool>(j, "y_placebo");
  r.washout_admitted = j.value("washout_admitted", false);
  if (j.contains("session") && !j.at("session").is_null()) {
    const auto& s = j.at("session");
    SessionMeta m;
    m.session_id = s.at("session_id").get<std::string>();
    m.messages_total = s.at("messages_total").get<std::int64_t>();
    m.tutor_messages = s.at("tutor_messages").get<std::int64_t>();
    m.student_messages = s.at("student_messages").get<std::int64_t>();
    m.duration_minutes = s.at("duration_minutes").get<double>();
    m.student_word_share = s.at("student_word_share").get<double>();
    m.prior_session_count = s.at("prior_session_count").get<std::int64_t>();
    r.session = m;
  }
  if (j.contains("features") && !j.at("features").is_null()) {
    const auto& f = j.at("features");
    KnowledgeFeatures k;
    k.p_current = f.at("p_current").get<double>();
    k.p_next = f.at("p_next").get<double>();
    k.cum_accuracy = f.at("cum_accuracy").get<double>();
    k.h = f.at("h").get<std::vector<double>>();
    r.features = std::move(k);
  }
  return r;
}

void write_rows(const std::filesystem::path& path, const AnalyticRows& rows) {
  std::string out;
  for (const auto& r : rows) out += row_to_json(r).dump() + "\n";
  write_text(path, out);
}

AnalyticRows read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "missing " + path.string());
  AnalyticRows rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      rows.push_back(row_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

EventLog load_log(const LogFiles& files, const IngestOptions& options) {
  std::ifstream events(files.events);
  if (!events) throw Error(ErrorCode::MissingUpstreamArtifact, "cannot read event log " + files.events.string());
  IngestOptions opts = options;
  if (opts.source.empty()) opts.source = files.events.string();
  const LogFormat fmt = files.events.extension() == ".jsonl" ? LogFormat::Jsonl : LogFormat::Csv;
  EventLog log = ingest_events(events, fmt, opts);
  std::map<std::string, SessionMeta> sessions;
  std::map<std::string, StudentContext> context;
  if (files.sessions) {
    std::ifstream in(*files.sessions);
    if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "cannot read sessions " + files.sessions->string());
    sessions = ingest_sessions(in);
  }
  if (files.context) {
    std::ifstream in(*files.context);
    if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "cannot read context " + files.context->string());
    context = ingest_context(in);
  }
  std::vector<InteractionEvent> evs = log.events();
  return EventLog::build(std::move(evs), std::move(sessions), std::move(context), log.provenance());
}

LogFiles save_log(const std::filesystem::path& dir, const EventLog& log) {
  LogFiles files{dir / "events.csv", dir / "sessions.csv", dir / "context.csv"};
  std::ostringstream ev, se, cx;
  emit_events(ev, log, LogFormat::Csv);
  emit_sessions(se, log.sessions());
  emit_context(cx, log.context());
  write_text(files.events, ev.str());
  write_text(*files.sessions, se.str());
  write_text(*files.context, cx.str());
  return files;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "missing " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tfx
