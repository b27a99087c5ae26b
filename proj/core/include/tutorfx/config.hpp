#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tutorfx/dkt.hpp"
#include "tutorfx/forest.hpp"
#include "tutorfx/sampler.hpp"
#include "tutorfx/simulator.hpp"

namespace tfx {

namespace toml {

/// Parses the subset of TOML the config uses: [tables], dotted table names, key = value with
/// strings, integers, floats, booleans and arrays of those, and # comments. Throws ConfigError.
nlohmann::json parse(std::string_view text, const std::string& source = "<config>");

/// Writes top-level scalars first, then one [table] per nested object.
std::string dump(const nlohmann::json& root);

}  // namespace toml

struct AnalysisOptions {
  std::vector<std::string> outcomes = {"immediate", "near_transfer"};
  std::vector<std::string> moderators = {"p_current"};  // z-scored before fitting
  std::vector<std::string> interactions;                // "a*b" among moderators
  std::vector<std::string> session_moderators = {"messages_total", "duration_minutes", "student_word_share",
                                                 "prior_session_count"};
  std::string moderator_method = "cluster_robust_ols";
  std::vector<std::string> variants = {"external_covariates", "washout_controls"};
  bool placebo = true;
  double placebo_min_coverage = 0.5;
  double clamp_lo = 0.01;
  double clamp_hi = 0.99;
  double trim_lo = 0.05;
  double trim_hi = 0.95;
  std::vector<std::string> rv_benchmarks = {"p_current", "cum_accuracy", "low_ses"};
  double rv_q = 1.0;
  bool tune_nuisance = false;
  std::size_t cate_histogram_bins = 40;

  nlohmann::json to_json() const;
  static AnalysisOptions from_json(const nlohmann::json& j);
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::optional<std::string> log_path;  // events CSV/JSONL; when absent `run` simulates
  std::optional<std::string> sessions_path;
  std::optional<std::string> context_path;
  std::string out_dir = "tutorfx-out";
  SimConfig simulate;
  SamplePolicy sample;
  DktConfig dkt;
  ForestConfig nuisance_forest;
  ForestConfig causal_forest;
  AnalysisOptions analysis;

  /// Copy with every stage seed derived from `seed` and the stage name.
  PipelineConfig resolved() const;
  void validate() const;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  std::string to_toml() const;
  static PipelineConfig from_toml(std::string_view text, const std::string& source = "<config>");
  static PipelineConfig load(const std::filesystem::path& path);
};

}  // namespace tfx
