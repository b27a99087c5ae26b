#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tutorfx/model.hpp"
#include "tutorfx/simulator.hpp"

namespace tfx::testing {

inline InteractionEvent ev(std::string student, std::int64_t ts, std::string problem, std::string skill, bool correct,
                           bool tutored = false) {
  InteractionEvent e;
  e.student_id = std::move(student);
  e.timestamp = ts;
  e.problem_id = std::move(problem);
  e.skill_id = std::move(skill);
  e.correct = correct;
  e.tutored = tutored;
  if (tutored) e.session_id = e.student_id + "-s" + std::to_string(ts);
  return e;
}

inline SessionMeta session(const std::string& id, std::int64_t msgs = 10) {
  SessionMeta s;
  s.session_id = id;
  s.messages_total = msgs;
  s.tutor_messages = msgs / 2;
  s.student_messages = msgs - msgs / 2;
  s.duration_minutes = 3.0;
  s.student_word_share = 0.4;
  return s;
}

// Builds a log and registers a session for every tutored event.
inline EventLog make_log(std::vector<InteractionEvent> events) {
  std::map<std::string, SessionMeta> sessions;
  for (const auto& e : events) {
    if (e.session_id) sessions[*e.session_id] = session(*e.session_id);
  }
  return EventLog::build(std::move(events), std::move(sessions));
}

inline SimConfig small_sim(std::size_t students = 300, std::uint64_t seed = 5) {
  SimConfig c;
  c.n_students = students;
  c.n_problems = 120;
  c.n_skills = 12;
  c.seed = seed;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("tutorfx-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tfx::testing
