#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace tfx {

struct ForestConfig {
  std::size_t n_trees = 500;
  bool honesty = true;
  double honesty_fraction = 0.5;
  double subsample_fraction = 0.5;
  std::optional<std::size_t> mtry;  // default ceil(sqrt(p))
  std::size_t min_leaf = 5;
  std::optional<std::size_t> max_depth;
  std::size_t max_bins = 256;  // split candidates per feature; features with fewer distinct values are exact
  std::uint64_t seed = 13;

  void validate() const;
  std::size_t mtry_for(std::size_t p) const;
  nlohmann::json to_json() const;
  static ForestConfig from_json(const nlohmann::json& j);
  bool operator==(const ForestConfig&) const = default;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // honest estimate (leaf value, or fallback for descendants)
  std::size_t n_est = 0;  // estimation-half units reaching the node

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<std::uint32_t> split_half;  // cluster indices, sorted
  std::vector<std::uint32_t> est_half;    // cluster indices, sorted (equal to split_half without honesty)
  std::vector<char> in_sample;            // per model cluster: 1 when in the subsample

  int leaf_of(const double* x, Eigen::Index stride) const;
  bool operator==(const Tree&) const = default;
};

enum class ForestKind { Regression, Causal };

class Forest {
 public:
  ForestKind kind = ForestKind::Regression;
  ForestConfig config;
  std::size_t n_features = 0;
  std::vector<std::string> clusters;  // sorted unique cluster ids seen in training
  std::vector<Tree> trees;
  bool degenerate_target = false;  // constant regression target

  /// Dense index of a training cluster id, if known.
  std::optional<std::uint32_t> cluster_index(const std::string& id) const;

  nlohmann::json to_json() const;
  static Forest from_json(const nlohmann::json& j);  // verifies the embedded checksum
  void save(const std::filesystem::path& path) const;
  static Forest load(const std::filesystem::path& path);
  /// Per-tree subsample cluster lists (split and estimation halves).
  nlohmann::json cluster_diagnostics() const;

  bool operator==(const Forest&) const = default;
};

struct ForestPrediction {
  std::vector<double> values;
  std::vector<std::size_t> n_trees_used;
};

Forest train_regression_forest(const Eigen::MatrixXd& X, std::span<const double> target,
                               std::span<const std::string> clusters, const ForestConfig& cfg);

/// Averages over trees whose subsample excluded each unit's cluster. Throws NoOobCoverage.
ForestPrediction oob_predict(const Forest& forest, const Eigen::MatrixXd& X,
                             std::span<const std::string> clusters);

/// Treatment status is read from the sign of z_tilde (Z - e_hat with e_hat in (0,1)).
Forest train_causal_forest(const Eigen::MatrixXd& X, std::span<const double> y_tilde,
                           std::span<const double> z_tilde, std::span<const std::string> clusters,
                           const ForestConfig& cfg);

/// Same cluster-excluded averaging as oob_predict, over causal leaf effects.
ForestPrediction predict_cate(const Forest& forest, const Eigen::MatrixXd& X,
                              std::span<const std::string> clusters);

/// Re-estimates every leaf from the estimation halves, keeping the tree structure.
Forest refit_leaves(Forest forest, const Eigen::MatrixXd& X, std::span<const double> y_or_y_tilde,
                    std::span<const double> z_tilde, std::span<const std::string> clusters);

/// Small grid over min_leaf and mtry scored by OOB R^2; returns the best config.
ForestConfig tune_regression_forest(const Eigen::MatrixXd& X, std::span<const double> target,
                                    std::span<const std::string> clusters, const ForestConfig& base);

}  // namespace tfx
