#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tutorfx/analysis.hpp"
#include "tutorfx/config.hpp"

namespace tfx {

std::string_view library_version();

/// Forest and clamp settings of a resolved config, ready for fit_causal.
CausalFitOptions fit_options(const PipelineConfig& resolved);

/// File-based pipeline rooted at the config's out_dir. Every stage reads its inputs from disk,
/// so stages can be rerun independently; run() chains them.
class Pipeline {
 public:
  explicit Pipeline(const PipelineConfig& config);
  Pipeline(const PipelineConfig& config, std::filesystem::path out_dir);

  void simulate();
  void prep();
  void train_dkt();
  void extract();
  /// reuse_forests loads the causal forest checkpoints written by an earlier estimate.
  void estimate(bool reuse_forests = false);
  void analyze();
  /// All stages; simulates first when no log path is configured.
  void run();

  const std::filesystem::path& out() const { return out_; }
  const PipelineConfig& config() const { return cfg_; }

  /// sha256 of every output file (relative path -> digest), excluding manifest.json and failed/.
  std::map<std::string, std::string> digests() const;

 private:
  PipelineConfig raw_;
  PipelineConfig cfg_;  // resolved seeds
  std::filesystem::path out_;

  template <typename F>
  void stage(const std::string& name, const std::vector<std::string>& outputs, F&& body);
  EventLog input_log() const;
  std::filesystem::path path(const std::string& rel) const { return out_ / rel; }
};

}  // namespace tfx
