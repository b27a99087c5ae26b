#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tutorfx/model.hpp"

namespace tfx {

/// Pre-treatment knowledge summary for one analytic row (filled by the dkt module).
struct KnowledgeFeatures {
  std::vector<double> h;      // LSTM hidden state before the anchor attempt
  double p_current = 0.5;     // predicted success on the anchor's skill
  double p_next = 0.5;        // predicted success on the outcome attempt's skill
  double cum_accuracy = 0.5;  // fraction correct strictly before the anchor (0.5 if none)

  bool operator==(const KnowledgeFeatures&) const = default;
};

struct AnalyticRow {
  std::string unit_id;  // "<student_id>:<anchor seq_index>"
  std::string student_id;
  std::int64_t anchor_seq = 0;
  std::string anchor_problem;
  std::string anchor_skill;
  int z = 0;
  std::optional<bool> y_next;  // next attempt without help
  std::optional<std::int64_t> y_next_seq;
  std::optional<std::string> y_next_skill;
  std::optional<bool> y_skill;  // first untutored attempt on a different skill
  std::optional<std::int64_t> y_skill_seq;
  std::optional<bool> y_placebo;  // correctness placebo_offset attempts before the anchor
  std::optional<SessionMeta> session;
  std::optional<KnowledgeFeatures> features;
  bool washout_admitted = false;

  bool operator==(const AnalyticRow&) const = default;
};

using AnalyticRows = std::vector<AnalyticRow>;

enum class ControlMode { NeverTreated, Washout };

struct SamplePolicy {
  ControlMode control_mode = ControlMode::NeverTreated;
  std::size_t washout_k_skills = 2;
  double holdout_fraction = 0.5;
  std::size_t placebo_offset = 3;
  bool restrict_to_treated_problems = true;
  std::uint64_t seed = 7;

  void validate() const;
};

struct FlowCounts {
  std::size_t students = 0;
  std::size_t attempts = 0;
  std::size_t problems = 0;

  bool operator==(const FlowCounts&) const = default;
};

/// Stage-by-stage accounting of how the analytic sample was built.
struct SampleFlowReport {
  FlowCounts original;
  FlowCounts treatment_all;
  FlowCounts treatment_excluded;
  FlowCounts treatment_final;
  FlowCounts control_all;
  FlowCounts holdout;
  FlowCounts control_analysis;
  FlowCounts control_excluded;
  FlowCounts control_final;
  std::optional<FlowCounts> washout_admitted;  // part of control_final in washout mode
  FlowCounts total;
  std::map<std::string, std::size_t> treated_exclusion_reasons;  // attempts per reason

  /// Conservation identities that fail (empty when the report reconciles).
  std::vector<std::string> check_conservation() const;
  std::string to_markdown() const;
  nlohmann::json to_json() const;
};

struct SampleSet {
  AnalyticRows treated;
  AnalyticRows control;
  EventLog holdout;
  SampleFlowReport flow;
};

/// Builds treatment, control and hold-out samples. Throws EmptyTreatmentSample or DegenerateSplit.
SampleSet build_samples(const EventLog& log, const SamplePolicy& policy);

/// Sets y_placebo from the attempt `offset` positions before each anchor, when it exists.
AnalyticRows link_placebo(AnalyticRows rows, const EventLog& log, std::size_t offset);

/// Treated rows followed by control rows, canonical order within each arm.
AnalyticRows combine(const SampleSet& samples);

}  // namespace tfx
