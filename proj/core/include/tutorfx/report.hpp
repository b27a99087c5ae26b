#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tutorfx/estimators.hpp"

namespace tfx {

/// "***" p<0.001, "**" p<0.01, "*" p<0.05.
std::string significance_stars(double p);

/// Effects table with one row per estimate (outcome, estimand, variant).
std::string effects_markdown(const std::vector<EffectEstimate>& effects);
std::string effects_csv(const std::vector<EffectEstimate>& effects);

struct CateSummary {
  std::size_t n = 0;
  double mean = 0.0;  // percentage points
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> edges;
  std::vector<std::size_t> counts;

  nlohmann::json to_json() const;
  std::string to_csv() const;  // bin_lo,bin_hi,count
};

/// Summary and equal-width histogram of CATEs given in percentage points.
CateSummary summarize_cates(std::span<const double> tau_pp, std::size_t n_bins);

/// Fixed-precision number formatting used across the report bundle.
std::string fmt_num(double v, int digits = 4);

}  // namespace tfx
