#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tutorfx/model.hpp"
#include "tutorfx/sampler.hpp"

namespace tfx {

struct DktConfig {
  std::size_t hidden_dim = 50;
  std::size_t embed_dim = 64;
  double learning_rate = 5e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t max_seq_len = 200;
  double grad_clip = 5.0;
  /// Share of hold-out students kept out of training to pick the best epoch; 0 trains on all
  /// students and keeps the last epoch.
  double validation_fraction = 0.2;
  std::uint64_t seed = 11;

  void validate() const;
  nlohmann::json to_json() const;
  static DktConfig from_json(const nlohmann::json& j);
};

/// Item and skill vocabularies. Index 0 of each is the reserved unknown slot.
struct DktVocab {
  std::vector<std::string> items;
  std::vector<std::string> skills;

  static DktVocab from_log(const EventLog& log);
  /// Rebuilds the lookup tables; call after editing items or skills.
  void reindex();
  int item_index(const std::string& id) const;   // 0 when unknown
  int skill_index(const std::string& id) const;  // 0 when unknown
  std::size_t n_items() const { return items.size() + 1; }
  std::size_t n_skills() const { return skills.size() + 1; }

 private:
  std::map<std::string, int> item_lut_, skill_lut_;
};

/// One student's attempts encoded for the network.
struct DktSequence {
  std::vector<int> tokens;  // item * 2 + correct
  std::vector<int> skills;  // skill of each attempt (the prediction target slot)
  std::vector<double> labels;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double auc = 0.0;  // on the epoch's own training predictions
  std::optional<double> val_auc;

  nlohmann::json to_json() const;
};

/// Offsets of each tensor inside the flat parameter vector (column-major blocks).
struct DktLayout {
  std::size_t hidden = 0, embed = 0, tokens = 0, skills = 0;
  std::size_t off_E = 0, off_W = 0, off_U = 0, off_b = 0, off_V = 0, off_c = 0, total = 0;

  static DktLayout make(std::size_t hidden, std::size_t embed, std::size_t n_items, std::size_t n_skills);
};

class DktModel {
 public:
  DktModel() = default;
  /// Random initialization from cfg.seed.
  static DktModel initialize(const DktConfig& cfg, DktVocab vocab);

  const DktConfig& config() const { return cfg_; }
  const DktVocab& vocab() const { return vocab_; }
  const DktLayout& layout() const { return layout_; }
  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }
  const std::vector<EpochRecord>& curve() const { return curve_; }
  std::vector<EpochRecord>& curve() { return curve_; }

  DktSequence encode(std::span<const InteractionEvent> events, std::size_t* unknown_items = nullptr,
                     std::size_t* unknown_skills = nullptr) const;

  /// Column t is the hidden state before attempt t is consumed (column 0 is zero); T+1 columns.
  Eigen::MatrixXd hidden_states(const DktSequence& seq) const;
  /// Success probability on `skill` given hidden state h, clamped strictly inside (0,1).
  double predict_skill(const Eigen::VectorXd& h, int skill) const;
  /// p_t for each attempt from the state before it.
  std::vector<double> predict(const DktSequence& seq) const;

  /// Mean binary cross-entropy over all predictions in `batch`.
  double loss(std::span<const DktSequence> batch) const;
  /// Mean loss; writes d(loss)/d(theta) into grad. Windows of max_seq_len, state carried.
  double loss_and_gradient(std::span<const DktSequence> batch, Eigen::VectorXd& grad) const;

  nlohmann::json to_json() const;
  static DktModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static DktModel load(const std::filesystem::path& path);

  bool operator==(const DktModel& other) const;

 private:
  struct Views;
  DktConfig cfg_;
  DktVocab vocab_;
  DktLayout layout_;
  Eigen::VectorXd theta_;
  std::vector<EpochRecord> curve_;

  double sequence_grad(const DktSequence& seq, Eigen::VectorXd* grad) const;
};

/// Trains on every student with at least two attempts. Throws NonFiniteLoss on divergence.
DktModel train_dkt(const EventLog& holdout, const DktConfig& cfg);

/// ROC-AUC by the midrank formula. Throws DegenerateLabels when one class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
double evaluate_auc(const DktModel& model, const EventLog& eval);

/// Max relative error between the analytic and central-difference gradients over all parameters.
double grad_check(const DktModel& model, const DktSequence& probe, double eps);

struct ExtractDiagnostics {
  std::size_t unknown_items = 0;
  std::size_t unknown_skills = 0;
};

/// Fills row.features from the state just before each anchor attempt.
AnalyticRows extract_features(const DktModel& model, AnalyticRows rows, const EventLog& log,
                              ExtractDiagnostics* diagnostics = nullptr);

}  // namespace tfx
