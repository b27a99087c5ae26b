#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tutorfx/dkt.hpp"
#include "tutorfx/estimators.hpp"
#include "tutorfx/sampler.hpp"

namespace tfx {

// ---------------------------------------------------------------------------
// regression

struct OlsResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  Eigen::MatrixXd vcov;
  std::size_t n = 0;
  std::size_t n_clusters = 0;
  double dof = 0.0;  // used for the t reference distribution
};

/// Classical OLS; X must already contain an intercept column if one is wanted.
OlsResult ols_iid(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
/// OLS with the CR1 cluster sandwich. small_sample=false drops the G/(G-1)*(n-1)/(n-k) factor.
OlsResult ols_cluster_robust(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             std::span<const std::string> clusters, bool small_sample = true);

struct RandomInterceptResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double sigma_e2 = 0.0;
  double sigma_u2 = 0.0;
  double log_likelihood = 0.0;
};

/// y = X beta + u_cluster + e, profiled ML over the ratio sigma_u2 / sigma_e2.
RandomInterceptResult fit_random_intercept(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                           std::span<const std::string> clusters);

enum class ModeratorMethod { ClusterRobustOls, RandomInterceptMl };
std::string to_string(ModeratorMethod m);

struct ModeratorFit {
  ModeratorMethod method = ModeratorMethod::ClusterRobustOls;
  std::vector<std::string> names;  // "intercept" first
  std::vector<double> beta;
  std::vector<double> std_errors;
  std::vector<double> p_values;
  std::size_t n = 0;
  std::size_t cluster_count = 0;
  std::optional<double> student_variance;

  double coef(const std::string& name) const;
  double p_value(const std::string& name) const;
  nlohmann::json to_json() const;
};

/// Regresses per-unit CATEs on the moderator columns plus an intercept. Throws RankDeficientDesign.
ModeratorFit fit_moderator_model(std::span<const double> cates, const Eigen::MatrixXd& moderators,
                                 const std::vector<std::string>& names, std::span<const std::string> clusters,
                                 ModeratorMethod method = ModeratorMethod::ClusterRobustOls);

/// z-scores a column (population SD). Throws ZeroVariance.
std::vector<double> zscore(std::span<const double> v);

// ---------------------------------------------------------------------------
// quartiles

struct QuartileBin {
  std::string label;  // "Q1".."Q4", or "Q2+Q3" after merging
  double lo = 0.0;    // smallest value in the bin
  double hi = 0.0;    // largest value in the bin
  std::size_t n = 0;
  double mean = 0.0;  // percentage points
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct QuartileContrast {
  std::string a, b;
  double difference = 0.0;  // mean(b) - mean(a), percentage points
  double std_error = 0.0;
  double p_value = 1.0;
  double p_value_adjusted = 1.0;
};

struct QuartileContrastTable {
  std::string variable;
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;  // order statistics used as edges
  std::vector<QuartileBin> bins;
  std::vector<QuartileContrast> contrasts;
  bool merged = false;
  std::string correction = "bonferroni";

  nlohmann::json to_json() const;
  std::string to_csv() const;  // quartile,mean,ci_low,ci_high
  std::string to_markdown() const;
};

/// Type-1 sample quantile (an order statistic).
double order_statistic_quantile(std::span<const double> v, double p);

/// Bins by sample quartiles (Q1: x<=q25, Q2: q25<x<=q50, Q3: q50<x<=q75, Q4: x>q75), fits
/// cell means with clustered SEs, and reports all pairwise contrasts. Throws DegenerateQuartiles.
QuartileContrastTable quartile_contrasts(std::span<const double> cates, std::span<const double> variable,
                                         std::span<const std::string> clusters, const std::string& name);

// ---------------------------------------------------------------------------
// sensitivity

double robustness_value(double t, double dof, double q = 1.0);
/// RV needed to bring the estimate to statistical non-significance at level alpha.
double robustness_value_alpha(double t, double dof, double q = 1.0, double alpha = 0.05);
/// Partial R^2 of a coefficient from its t statistic.
double partial_r2(double t, double dof);

struct BenchmarkCovariate {
  std::string name;
  double r2_with_treatment = 0.0;
  double r2_with_outcome = 0.0;
  double ratio = 0.0;  // RV divided by the larger of the two
};

struct SensitivityReport {
  double t_statistic = 0.0;
  double dof = 0.0;
  double q = 1.0;
  double f_q = 0.0;
  double rv_q = 0.0;
  double rv_q_alpha = 0.0;
  std::vector<BenchmarkCovariate> benchmarks;

  nlohmann::json to_json() const;
};

SensitivityReport robustness_report(double t, double dof, double q = 1.0);

/// Treatment t statistic from OLS of y on [1, z, X]; benchmarks are named columns of X.
SensitivityReport sensitivity_analysis(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                                       std::span<const double> y, std::span<const double> z,
                                       const std::vector<std::string>& benchmark_names, double q = 1.0);

// ---------------------------------------------------------------------------
// overlap and trimming

struct OverlapReport {
  std::vector<double> edges;  // histogram bin edges on [0,1]
  std::vector<std::size_t> counts;
  double min = 0.0;
  double max = 0.0;
  double q05 = 0.0;  // central-mass interval
  double q95 = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t below = 0;  // e_hat < lo
  std::size_t above = 0;  // e_hat > hi
  std::size_t n = 0;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

OverlapReport overlap_report(std::span<const double> e_hat, double lo, double hi, std::size_t n_bins = 20);

struct TrimResult {
  std::vector<std::size_t> kept;  // indices into the input
  OverlapReport report;
};

/// Keeps units with lo <= e_hat <= hi. Throws EmptyAfterTrim.
TrimResult trim_by_propensity(std::span<const double> e_hat, double lo, double hi);

// ---------------------------------------------------------------------------
// effect runs

struct EffectRun {
  Outcome outcome = Outcome::Immediate;
  std::vector<std::size_t> selected;  // rows with the outcome present
  Design design;
  CausalFit fit;
};

/// Selects rows with the outcome, builds the design and runs fit_causal.
EffectRun run_effect(const AnalyticRows& rows, Outcome outcome, const CausalFitOptions& options,
                     const std::map<std::string, StudentContext>* context = nullptr);

/// Re-estimates with the pre-treatment outcome. Throws InsufficientPlaceboCoverage.
EffectRun run_placebo(const AnalyticRows& rows, const CausalFitOptions& options, double min_coverage);

enum class Variant { ExternalCovariates, WashoutControls };
std::string to_string(Variant v);

struct VariantInputs {
  const EventLog& log;
  const DktModel& model;
  SamplePolicy policy;
  const AnalyticRows& primary_rows;  // features already extracted
};

EffectRun run_variant(Variant variant, const VariantInputs& inputs, Outcome outcome, const CausalFitOptions& options);

}  // namespace tfx
