#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tfx {

/// One timestamped problem attempt.
struct InteractionEvent {
  std::string student_id;
  std::int64_t seq_index = 0;
  std::int64_t timestamp = 0;  // epoch milliseconds
  std::string problem_id;
  std::string skill_id;
  bool correct = false;
  bool tutored = false;  // treatment occurred on this attempt
  std::optional<std::string> session_id;
  std::map<std::string, std::string> extras;  // unknown input columns, passed through

  bool operator==(const InteractionEvent&) const = default;
};

/// Characteristics of one tutoring session (moderator inputs).
struct SessionMeta {
  std::string session_id;
  std::int64_t messages_total = 0;
  std::int64_t tutor_messages = 0;
  std::int64_t student_messages = 0;
  double duration_minutes = 0.0;
  double student_word_share = 0.0;
  std::int64_t prior_session_count = 0;

  bool operator==(const SessionMeta&) const = default;
};

enum class Gender { A, B, C };

/// Optional student-level covariates. Missing values stay missing.
struct StudentContext {
  std::string student_id;
  std::optional<double> pretest_score;
  std::optional<Gender> gender;
  std::optional<bool> low_ses_flag;
  std::optional<std::string> school_id;

  bool operator==(const StudentContext&) const = default;
};

struct IngestCounts {
  std::size_t input_rows = 0;
  std::size_t kept = 0;
  std::size_t dropped_malformed = 0;
  std::size_t deduplicated = 0;

  bool operator==(const IngestCounts&) const = default;
};

struct Provenance {
  std::string source;
  IngestCounts counts;

  bool operator==(const Provenance&) const = default;
};

/// Contiguous range of one student's events inside EventLog::events().
struct StudentSpan {
  std::string student_id;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const StudentSpan&) const = default;
};

/// Immutable, validated container of attempts grouped by student.
///
/// Students are stored in lexicographic id order; within a student, events are
/// sorted by (timestamp, problem_id, input order) and seq_index is 0..n-1.
class EventLog {
 public:
  EventLog() = default;

  /// Sorts, groups and re-indexes `events`. Input order is the final tie-break.
  static EventLog build(std::vector<InteractionEvent> events,
                        std::map<std::string, SessionMeta> sessions = {},
                        std::map<std::string, StudentContext> context = {},
                        Provenance provenance = {});

  const std::vector<InteractionEvent>& events() const { return events_; }
  const std::vector<StudentSpan>& students() const { return students_; }
  const std::map<std::string, SessionMeta>& sessions() const { return sessions_; }
  const std::map<std::string, StudentContext>& context() const { return context_; }
  const Provenance& provenance() const { return provenance_; }

  std::span<const InteractionEvent> student_events(std::size_t student_index) const;
  /// Index into students(), or nullopt.
  std::optional<std::size_t> find_student(const std::string& student_id) const;
  const InteractionEvent& at(const std::string& student_id, std::int64_t seq_index) const;

  /// Same sessions/context, restricted to the given students.
  EventLog subset(const std::vector<std::string>& student_ids) const;
  EventLog with_context(std::map<std::string, StudentContext> context) const;

  std::size_t size() const { return events_.size(); }
  bool operator==(const EventLog&) const = default;

 private:
  std::vector<InteractionEvent> events_;
  std::vector<StudentSpan> students_;
  std::map<std::string, std::size_t> student_index_;
  std::map<std::string, SessionMeta> sessions_;
  std::map<std::string, StudentContext> context_;
  Provenance provenance_;
};

}  // namespace tfx
