#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tutorfx/forest.hpp"
#include "tutorfx/model.hpp"
#include "tutorfx/sampler.hpp"

namespace tfx {

struct NuisanceEstimates {
  std::vector<double> m_hat;
  std::vector<double> e_hat;
};

struct ResidualizedData {
  std::vector<double> y_tilde;
  std::vector<double> z_tilde;
};

enum class Estimand { ATE, ATT, PlaceboATE };
std::string to_string(Estimand e);

/// Point estimate and 95% interval, in percentage points.
struct EffectEstimate {
  Estimand estimand = Estimand::ATE;
  std::string outcome;  // "immediate", "near_transfer", "placebo"
  std::string variant = "primary";
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double std_error = 0.0;
  std::size_t n_units = 0;
  std::size_t n_clusters = 0;
  double p_value = 1.0;
  std::optional<double> p_value_adjusted;

  bool covers(double value_pp) const { return ci_low <= value_pp && value_pp <= ci_high; }
  nlohmann::json to_json() const;
};

ResidualizedData residualize(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nuisance);

/// Per-unit AIPW scores (probability scale).
std::vector<double> aipw_scores(std::span<const double> y, std::span<const double> z,
                                const NuisanceEstimates& nuisance, std::span<const double> tau);

/// Mean of scores with a student-clustered standard error, scaled to percentage points.
EffectEstimate summarize_scores(std::span<const double> scores, std::span<const std::string> clusters, Estimand estimand);

EffectEstimate aipw_ate(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nuisance,
                        std::span<const double> tau, std::span<const std::string> clusters);
/// Scores restricted to treated units. Throws NoTreatedUnits.
EffectEstimate aipw_att(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nuisance,
                        std::span<const double> tau, std::span<const std::string> clusters);

std::vector<double> bonferroni(std::span<const double> p_values, std::size_t family_size);
/// Pearson correlation. Throws ZeroVariance.
double cate_correlation(std::span<const double> a, std::span<const double> b);
double normal_two_sided_p(double z);
/// Difference in mean outcome, treated minus untreated (probability scale).
double naive_difference(std::span<const double> y, std::span<const double> z);

std::vector<double> clamp_propensity(std::vector<double> e_hat, double lo, double hi);

// ---------------------------------------------------------------------------
// covariates and the full residual-on-residual fit

enum class Outcome { Immediate, NearTransfer, Placebo };
std::string to_string(Outcome o);
std::optional<bool> outcome_of(const AnalyticRow& row, Outcome o);

struct Design {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

/// Knowledge features (h, p_current, p_next, cum_accuracy) for the selected rows, plus
/// student context columns when `context` is given. Throws MissingContext.
Design design_matrix(const AnalyticRows& rows, std::span<const std::size_t> selected,
                     const std::map<std::string, StudentContext>* context = nullptr);

struct CausalFitOptions {
  ForestConfig nuisance_forest;
  ForestConfig causal_forest;
  double clamp_lo = 0.01;
  double clamp_hi = 0.99;
  std::optional<std::vector<double>> m_override;  // replaces the fitted m_hat
  std::optional<std::vector<double>> e_override;  // replaces the fitted e_hat (still clamped)
  std::optional<Forest> causal_override;          // a previously trained causal forest to reuse
  bool tune_nuisance = false;                     // grid-search min_leaf and mtry by OOB R^2
};

struct CausalFit {
  std::vector<double> y;
  std::vector<double> z;
  std::vector<std::string> clusters;
  NuisanceEstimates nuisance;
  ResidualizedData residuals;
  ForestPrediction cate;
  Forest causal_forest;
  EffectEstimate ate;
  EffectEstimate att;
};

/// Nuisance forests (out-of-bag), residualization, causal forest and AIPW summaries.
CausalFit fit_causal(const Eigen::MatrixXd& X, std::span<const double> y, std::span<const double> z,
                     std::span<const std::string> clusters, const CausalFitOptions& options);

}  // namespace tfx
