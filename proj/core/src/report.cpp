#include "tutorfx/report.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tutorfx/error.hpp"

namespace tfx {

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

std::string fmt_num(double v, int digits) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  std::string s = fmt::format("{:.{}f}", v, digits);
  if (s.find_first_not_of("-0.") == std::string::npos) s = fmt::format("{:.{}f}", 0.0, digits);  // no "-0.00"
  return s;
}

namespace {

std::string outcome_label(const std::string& outcome) {
  if (outcome == "immediate") return "Immediate Performance";
  if (outcome == "near_transfer") return "Near Transfer";
  if (outcome == "placebo") return "Placebo Test (Pre-Intervention)";
  return outcome;
}

std::string variant_label(const std::string& variant) {
  if (variant == "primary") return "Primary";
  if (variant == "external_covariates") return "External Covariates";
  if (variant == "washout_controls") return "Washout Controls";
  if (variant == "trimmed") return "Trimmed";
  return variant;
}

}  // namespace

std::string effects_markdown(const std::vector<EffectEstimate>& effects) {
  std::string out =
      "| Outcome | Estimand | Sample | Estimate (pp) | 95% CI | SE | Units | Students | p (Bonferroni) |\n"
      "|---|---|---|---:|---|---:|---:|---:|---:|\n";
  for (const auto& e : effects) {
    const double p = e.p_value_adjusted.value_or(e.p_value);
    out += fmt::format("| {} | {} | {} | {}{} | [{}, {}] | {} | {} | {} | {} |\n", outcome_label(e.outcome),
                       to_string(e.estimand), variant_label(e.variant), fmt_num(e.estimate, 2), significance_stars(p),
                       fmt_num(e.ci_low, 2), fmt_num(e.ci_high, 2), fmt_num(e.std_error, 2), e.n_units, e.n_clusters,
                       fmt_num(p, 4));
  }
  out += "\nStars use Bonferroni-adjusted p-values: * p<0.05, ** p<0.01, *** p<0.001.\n";
  return out;
}

std::string effects_csv(const std::vector<EffectEstimate>& effects) {
  std::string out = "outcome,estimand,variant,estimate_pp,ci_low_pp,ci_high_pp,std_error_pp,n_units,n_clusters,p_value,p_value_adjusted\n";
  for (const auto& e : effects) {
    out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{:.17g},{}\n", e.outcome, to_string(e.estimand),
                       e.variant, e.estimate, e.ci_low, e.ci_high, e.std_error, e.n_units, e.n_clusters, e.p_value,
                       e.p_value_adjusted ? fmt::format("{:.17g}", *e.p_value_adjusted) : "");
  }
  return out;
}

nlohmann::json CateSummary::to_json() const {
  return {{"n", n}, {"mean_pp", mean}, {"sd_pp", sd}, {"min_pp", min}, {"max_pp", max},
          {"histogram", {{"edges", edges}, {"counts", counts}}}};
}

std::string CateSummary::to_csv() const {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) out += fmt::format("{:.6f},{:.6f},{}\n", edges[b], edges[b + 1], counts[b]);
  return out;
}

CateSummary summarize_cates(std::span<const double> tau, std::size_t n_bins) {
  if (tau.empty()) throw Error(ErrorCode::EmptySelection, "no CATEs to summarize");
  if (n_bins < 1) throw Error(ErrorCode::ConfigError, "histogram needs at least one bin");
  CateSummary s;
  s.n = tau.size();
  s.min = *std::min_element(tau.begin(), tau.end());
  s.max = *std::max_element(tau.begin(), tau.end());
  for (double t : tau) s.mean += t;
  s.mean /= static_cast<double>(s.n);
  double ss = 0.0;
  for (double t : tau) ss += (t - s.mean) * (t - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  const double width = s.max > s.min ? (s.max - s.min) / static_cast<double>(n_bins) : 1.0;
  for (std::size_t b = 0; b <= n_bins; ++b) s.edges.push_back(s.min + width * static_cast<double>(b));
  s.counts.assign(n_bins, 0);
  for (double t : tau) {
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>((t - s.min) / width));
    ++s.counts[b];
  }
  return s;
}

}  // namespace tfx
