#include "tutorfx/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "tutorfx/error.hpp"
#include "tutorfx/rng.hpp"

namespace tfx {

std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::ATE: return "ATE";
    case Estimand::ATT: return "ATT";
    case Estimand::PlaceboATE: return "PLACEBO_ATE";
  }
  return "?";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Immediate: return "immediate";
    case Outcome::NearTransfer: return "near_transfer";
    case Outcome::Placebo: return "placebo";
  }
  return "?";
}

nlohmann::json EffectEstimate::to_json() const {
  nlohmann::json j = {{"estimand", to_string(estimand)},
                      {"outcome", outcome},
                      {"variant", variant},
                      {"estimate_pp", estimate},
                      {"ci_low_pp", ci_low},
                      {"ci_high_pp", ci_high},
                      {"std_error_pp", std_error},
                      {"n_units", n_units},
                      {"n_clusters", n_clusters},
                      {"p_value", p_value}};
  j["p_value_adjusted"] = p_value_adjusted ? nlohmann::json(*p_value_adjusted) : nlohmann::json(nullptr);
  return j;
}

namespace {

void check_lengths(std::size_t n, std::initializer_list<std::size_t> others) {
  for (auto m : others) {
    if (m != n) throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(n) + " values, got " + std::to_string(m));
  }
}

}  // namespace

ResidualizedData residualize(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nu) {
  check_lengths(y.size(), {z.size(), nu.m_hat.size(), nu.e_hat.size()});
  ResidualizedData r;
  r.y_tilde.resize(y.size());
  r.z_tilde.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    r.y_tilde[i] = y[i] - nu.m_hat[i];
    r.z_tilde[i] = z[i] - nu.e_hat[i];
  }
  return r;
}

std::vector<double> aipw_scores(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nu,
                                std::span<const double> tau) {
  check_lengths(y.size(), {z.size(), nu.m_hat.size(), nu.e_hat.size(), tau.size()});
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = nu.e_hat[i];
    if (!(e > 0.0 && e < 1.0)) {
      throw Error(ErrorCode::PropensityOutOfRange, "e_hat[" + std::to_string(i) + "] = " + std::to_string(e));
    }
    const double m1 = nu.m_hat[i] + (1.0 - e) * tau[i];
    const double m0 = nu.m_hat[i] - e * tau[i];
    const double mz = z[i] > 0.5 ? m1 : m0;
    g[i] = tau[i] + (z[i] - e) / (e * (1.0 - e)) * (y[i] - mz);
  }
  return g;
}

double normal_two_sided_p(double z) {
  if (!std::isfinite(z)) return 0.0;
  const boost::math::normal_distribution<double> n01;
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(n01, std::abs(z))));
}

EffectEstimate summarize_scores(std::span<const double> scores, std::span<const std::string> clusters, Estimand estimand) {
  check_lengths(scores.size(), {clusters.size()});
  if (scores.empty()) throw Error(ErrorCode::EmptySelection, "no units to summarize");
  const auto n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= n;

  // sum of centered scores per cluster, in sorted cluster order
  std::map<std::string, double> by_cluster;
  for (std::size_t i = 0; i < scores.size(); ++i) by_cluster[clusters[i]] += scores[i] - mean;
  const auto G = static_cast<double>(by_cluster.size());
  double ss = 0.0;
  for (const auto& [id, s] : by_cluster) ss += s * s;
  const double var = G > 1.0 ? G / (G - 1.0) * ss / (n * n) : 0.0;
  const double se = std::sqrt(var);

  EffectEstimate e;
  e.estimand = estimand;
  e.estimate = 100.0 * mean;
  e.std_error = 100.0 * se;
  e.ci_low = e.estimate - 1.96 * e.std_error;
  e.ci_high = e.estimate + 1.96 * e.std_error;
  e.n_units = scores.size();
  e.n_clusters = by_cluster.size();
  e.p_value = se > 0.0 ? normal_two_sided_p(mean / se) : (mean == 0.0 ? 1.0 : 0.0);
  return e;
}

EffectEstimate aipw_ate(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nu,
                        std::span<const double> tau, std::span<const std::string> clusters) {
  return summarize_scores(aipw_scores(y, z, nu, tau), clusters, Estimand::ATE);
}

EffectEstimate aipw_att(std::span<const double> y, std::span<const double> z, const NuisanceEstimates& nu,
                        std::span<const double> tau, std::span<const std::string> clusters) {
  const auto g = aipw_scores(y, z, nu, tau);
  check_lengths(g.size(), {clusters.size()});
  std::vector<double> treated;
  std::vector<std::string> treated_clusters;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (z[i] > 0.5) {
      treated.push_back(g[i]);
      treated_clusters.push_back(clusters[i]);
    }
  }
  if (treated.empty()) throw Error(ErrorCode::NoTreatedUnits, "ATT needs at least one treated unit");
  return summarize_scores(treated, treated_clusters, Estimand::ATT);
}

std::vector<double> bonferroni(std::span<const double> p_values, std::size_t family_size) {
  if (family_size < 1) throw Error(ErrorCode::ConfigError, "Bonferroni family size must be >= 1");
  std::vector<double> out(p_values.size());
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    out[i] = std::min(1.0, static_cast<double>(family_size) * p_values[i]);
  }
  return out;
}

double cate_correlation(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), {b.size()});
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::ZeroVariance, "correlation with a constant vector");
  return sab / std::sqrt(saa * sbb);
}

double naive_difference(std::span<const double> y, std::span<const double> z) {
  check_lengths(y.size(), {z.size()});
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (z[i] > 0.5) {
      s1 += y[i];
      ++n1;
    } else {
      s0 += y[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw Error(ErrorCode::NoTreatedUnits, "naive difference needs both arms");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

std::vector<double> clamp_propensity(std::vector<double> e_hat, double lo, double hi) {
  for (auto& e : e_hat) e = std::clamp(e, lo, hi);
  return e_hat;
}

std::optional<bool> outcome_of(const AnalyticRow& row, Outcome o) {
  switch (o) {
    case Outcome::Immediate: return row.y_next;
    case Outcome::NearTransfer: return row.y_skill;
    case Outcome::Placebo: return row.y_placebo;
  }
  return std::nullopt;
}

Design design_matrix(const AnalyticRows& rows, std::span<const std::size_t> selected,
                     const std::map<std::string, StudentContext>* context) {
  if (selected.empty()) throw Error(ErrorCode::EmptySelection, "no rows selected for the design matrix");
  const auto& first = rows.at(selected[0]);
  if (!first.features) throw Error(ErrorCode::MissingUpstreamArtifact, "rows lack knowledge features");
  const std::size_t H = first.features->h.size();

  Design d;
  for (std::size_t k = 0; k < H; ++k) d.names.push_back("H_" + std::to_string(k + 1));
  d.names.insert(d.names.end(), {"p_current", "p_next", "cum_accuracy"});

  std::vector<std::string> schools;
  double pretest_mean = 0.0;
  if (context) {
    if (context->empty()) throw Error(ErrorCode::MissingContext, "external covariates requested without student context");
    std::set<std::string> school_set;
    std::size_t n_pretest = 0;
    for (const auto& [id, c] : *context) {
      if (c.school_id) school_set.insert(*c.school_id);
      if (c.pretest_score) {
        pretest_mean += *c.pretest_score;
        ++n_pretest;
      }
    }
    if (n_pretest) pretest_mean /= static_cast<double>(n_pretest);
    schools.assign(school_set.begin(), school_set.end());
    // gender A and the first school are reference levels
    d.names.insert(d.names.end(), {"pretest", "pretest_missing", "gender_B", "gender_C", "low_ses"});
    for (std::size_t k = 1; k < schools.size(); ++k) d.names.push_back("school_" + schools[k]);
  }

  d.X.resize(static_cast<Eigen::Index>(selected.size()), static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t r = 0; r < selected.size(); ++r) {
    const auto& row = rows.at(selected[r]);
    if (!row.features || row.features->h.size() != H) {
      throw Error(ErrorCode::MissingUpstreamArtifact, "row " + row.unit_id + " lacks knowledge features");
    }
    const auto i = static_cast<Eigen::Index>(r);
    Eigen::Index c = 0;
    for (double v : row.features->h) d.X(i, c++) = v;
    d.X(i, c++) = row.features->p_current;
    d.X(i, c++) = row.features->p_next;
    d.X(i, c++) = row.features->cum_accuracy;
    if (context) {
      auto it = context->find(row.student_id);
      if (it == context->end()) throw Error(ErrorCode::MissingContext, "no context for student " + row.student_id);
      const auto& ctx = it->second;
      d.X(i, c++) = ctx.pretest_score.value_or(pretest_mean);
      d.X(i, c++) = ctx.pretest_score ? 0.0 : 1.0;
      d.X(i, c++) = ctx.gender == Gender::B ? 1.0 : 0.0;
      d.X(i, c++) = ctx.gender == Gender::C ? 1.0 : 0.0;
      d.X(i, c++) = ctx.low_ses_flag.value_or(false) ? 1.0 : 0.0;
      for (std::size_t k = 1; k < schools.size(); ++k) d.X(i, c++) = ctx.school_id == schools[k] ? 1.0 : 0.0;
    }
  }
  return d;
}

CausalFit fit_causal(const Eigen::MatrixXd& X, std::span<const double> y, std::span<const double> z,
                     std::span<const std::string> clusters, const CausalFitOptions& opt) {
  const auto n = static_cast<std::size_t>(X.rows());
  check_lengths(n, {y.size(), z.size(), clusters.size()});
  CausalFit fit;
  fit.y.assign(y.begin(), y.end());
  fit.z.assign(z.begin(), z.end());
  fit.clusters.assign(clusters.begin(), clusters.end());

  ForestConfig m_cfg = opt.nuisance_forest;
  m_cfg.seed = derive_seed(opt.nuisance_forest.seed, std::string_view("m_hat"));
  ForestConfig e_cfg = opt.nuisance_forest;
  e_cfg.seed = derive_seed(opt.nuisance_forest.seed, std::string_view("e_hat"));
  if (opt.tune_nuisance) {
    if (!opt.m_override) m_cfg = tune_regression_forest(X, y, clusters, m_cfg);
    if (!opt.e_override) e_cfg = tune_regression_forest(X, z, clusters, e_cfg);
  }

  if (opt.m_override) {
    check_lengths(n, {opt.m_override->size()});
    fit.nuisance.m_hat = *opt.m_override;
  } else {
    fit.nuisance.m_hat = oob_predict(train_regression_forest(X, y, clusters, m_cfg), X, clusters).values;
  }
  std::vector<double> e_raw;
  if (opt.e_override) {
    check_lengths(n, {opt.e_override->size()});
    e_raw = *opt.e_override;
  } else {
    e_raw = oob_predict(train_regression_forest(X, z, clusters, e_cfg), X, clusters).values;
  }
  fit.nuisance.e_hat = clamp_propensity(std::move(e_raw), opt.clamp_lo, opt.clamp_hi);

  fit.residuals = residualize(y, z, fit.nuisance);
  if (opt.causal_override) {
    if (opt.causal_override->kind != ForestKind::Causal) {
      throw Error(ErrorCode::ChecksumMismatch, "reused forest is not a causal forest");
    }
    fit.causal_forest = *opt.causal_override;
  } else {
    fit.causal_forest =
        train_causal_forest(X, fit.residuals.y_tilde, fit.residuals.z_tilde, clusters, opt.causal_forest);
  }
  fit.cate = predict_cate(fit.causal_forest, X, clusters);
  fit.ate = aipw_ate(y, z, fit.nuisance, fit.cate.values, clusters);
  fit.att = aipw_att(y, z, fit.nuisance, fit.cate.values, clusters);
  return fit;
}

}  // namespace tfx
