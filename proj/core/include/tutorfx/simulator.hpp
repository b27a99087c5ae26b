#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tutorfx/model.hpp"

namespace tfx {

/// Effect of a tutoring session on the success probability of later attempts.
struct EffectFn {
  enum class Kind { Zero, Constant, LinearInMastery };
  Kind kind = Kind::Constant;
  double c = 0.04;   // Constant
  double a = 0.10;   // LinearInMastery: a + b * mastery
  double b = -0.08;

  static EffectFn zero() { return {Kind::Zero, 0.0, 0.0, 0.0}; }
  static EffectFn constant(double c) { return {Kind::Constant, c, 0.0, 0.0}; }
  static EffectFn linear_in_mastery(double a, double b) { return {Kind::LinearInMastery, 0.0, a, b}; }

  /// Effect on an attempt whose untreated success probability is `mastery`.
  double operator()(double mastery) const;
};

struct SimConfig {
  std::size_t n_students = 2000;
  std::size_t n_problems = 400;
  std::size_t n_skills = 40;
  std::size_t seq_len_min = 15;
  std::size_t seq_len_max = 35;
  double ability_mean = 0.0;
  double ability_sd = 0.25;
  double learning_rate = 0.01;
  /// Difficulty is drawn per skill, and each problem adds item-level noise.
  double difficulty_mean = -0.6;
  double difficulty_sd = 1.2;
  double item_difficulty_sd = 0.3;
  double selection_strength = 1.0;
  double base_treat_prob = 0.05;
  EffectFn effect;
  double outcome_noise = 1.0;  // logistic scale
  /// Ceiling on the untreated success probability (slip).
  double max_success_prob = 0.95;
  /// Fraction of students for whom on-demand tutoring is available at all.
  double help_access_fraction = 0.6;
  /// After a session, this many following attempts cannot be tutored.
  std::size_t min_gap = 1;
  /// Permanent ability gain per session (carryover); not part of the recorded tau.
  double carryover_theta = 0.0;
  std::size_t skill_block_min = 2;
  std::size_t skill_block_max = 5;
  std::size_t n_schools = 12;
  double pretest_missing_rate = 0.05;
  double low_ses_rate = 0.3;
  std::uint64_t seed = 1;

  /// Throws InvalidConfig when an invariant fails.
  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

/// Known quantities for one causal unit (an anchor attempt with a later untutored attempt).
struct UnitTruth {
  std::string unit_id;  // "<student_id>:<seq_index>"
  std::size_t student = 0;
  std::int64_t seq_index = 0;
  std::int64_t outcome_seq = 0;  // next untutored attempt
  bool tutored = false;
  bool eligible = false;  // tutoring was available on this attempt
  double p_anchor = 0.0;  // untreated success probability of the anchor attempt
  double e = 0.0;         // help-seeking propensity
  double m = 0.0;         // E[Y | latent state]
  double tau = 0.0;       // immediate-outcome effect of tutoring this attempt
  bool y0 = false;
  bool y1 = false;
  std::optional<std::int64_t> skill_outcome_seq;
  double tau_skill = 0.0;
  bool y0_skill = false;
  bool y1_skill = false;
};

struct GroundTruth {
  std::vector<UnitTruth> units;
  std::vector<std::vector<double>> ability;  // per student, per attempt
  std::vector<double> problem_difficulty;

  const UnitTruth* find(const std::string& unit_id) const;
  void write_jsonl(std::ostream& out) const;
  bool operator==(const GroundTruth&) const;

 private:
  mutable std::map<std::string, std::size_t> index_;
};

struct Simulation {
  EventLog log;
  GroundTruth truth;
};

std::string unit_id_for(const std::string& student_id, std::int64_t seq_index);

/// Generates a population; deterministic in cfg (including seed) and independent of thread count.
Simulation simulate_population(const SimConfig& cfg);

/// Mean tau over units satisfying `filter`. Throws EmptySelection.
double oracle_ate(const GroundTruth& gt, const std::function<bool(const UnitTruth&)>& filter);
/// Mean tau over the listed unit ids (all must exist).
double oracle_ate(const GroundTruth& gt, const std::vector<std::string>& unit_ids);

/// Treated-minus-untreated mean of next-untutored-attempt correctness, read straight from a log.
double naive_log_difference(const EventLog& log);

}  // namespace tfx
