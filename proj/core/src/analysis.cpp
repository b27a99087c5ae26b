#include "tutorfx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

#include "tutorfx/error.hpp"

namespace tfx {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double t_two_sided_p(double t, double dof) {
  if (!std::isfinite(t)) return 0.0;
  if (!(dof > 0.0)) return normal_two_sided_p(t);
  const boost::math::students_t_distribution<double> dist(dof);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

// Solves the normal equations after confirming X has full column rank.
MatrixXd checked_inverse_xtx(const MatrixXd& X) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
  if (qr.rank() < X.cols()) {
    throw Error(ErrorCode::RankDeficientDesign,
                "design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(X.cols()) + " columns");
  }
  const MatrixXd xtx = X.transpose() * X;
  return xtx.ldlt().solve(MatrixXd::Identity(X.cols(), X.cols()));
}

void finish(OlsResult& r) {
  const auto k = r.beta.size();
  r.se.resize(k);
  r.t.resize(k);
  r.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    r.se(j) = std::sqrt(std::max(0.0, r.vcov(j, j)));
    r.t(j) = r.se(j) > 0.0 ? r.beta(j) / r.se(j) : (r.beta(j) == 0.0 ? 0.0 : std::copysign(INFINITY, r.beta(j)));
    r.p(j) = t_two_sided_p(r.t(j), r.dof);
  }
}

std::vector<std::uint32_t> dense_clusters(std::span<const std::string> clusters, std::size_t* count) {
  std::vector<std::string> ids(clusters.begin(), clusters.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::uint32_t> out(clusters.size());
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    out[i] = static_cast<std::uint32_t>(std::lower_bound(ids.begin(), ids.end(), clusters[i]) - ids.begin());
  }
  *count = ids.size();
  return out;
}

}  // namespace

OlsResult ols_iid(const MatrixXd& X, const VectorXd& y) {
  if (X.rows() != y.size()) throw Error(ErrorCode::LengthMismatch, "X and y differ in length");
  const MatrixXd inv = checked_inverse_xtx(X);
  OlsResult r;
  r.n = static_cast<std::size_t>(X.rows());
  r.beta = inv * (X.transpose() * y);
  const VectorXd u = y - X * r.beta;
  r.dof = static_cast<double>(X.rows() - X.cols());
  const double s2 = r.dof > 0.0 ? u.squaredNorm() / r.dof : 0.0;
  r.vcov = s2 * inv;
  finish(r);
  return r;
}

OlsResult ols_cluster_robust(const MatrixXd& X, const VectorXd& y, std::span<const std::string> clusters,
                             bool small_sample) {
  if (X.rows() != y.size() || static_cast<std::size_t>(X.rows()) != clusters.size()) {
    throw Error(ErrorCode::LengthMismatch, "X, y and clusters differ in length");
  }
  const MatrixXd inv = checked_inverse_xtx(X);
  OlsResult r;
  r.n = static_cast<std::size_t>(X.rows());
  r.beta = inv * (X.transpose() * y);
  const VectorXd u = y - X * r.beta;
  std::size_t G = 0;
  const auto cl = dense_clusters(clusters, &G);
  MatrixXd scores = MatrixXd::Zero(static_cast<Eigen::Index>(G), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) scores.row(cl[static_cast<std::size_t>(i)]) += u(i) * X.row(i);
  const MatrixXd meat = scores.transpose() * scores;
  double c = 1.0;
  const auto n = static_cast<double>(X.rows()), k = static_cast<double>(X.cols()), g = static_cast<double>(G);
  if (small_sample && G > 1 && n > k) c = g / (g - 1.0) * (n - 1.0) / (n - k);
  r.vcov = c * inv * meat * inv;
  r.n_clusters = G;
  r.dof = G > 1 ? g - 1.0 : 0.0;
  finish(r);
  return r;
}

RandomInterceptResult fit_random_intercept(const MatrixXd& X, const VectorXd& y, std::span<const std::string> clusters) {
  if (X.rows() != y.size() || static_cast<std::size_t>(X.rows()) != clusters.size()) {
    throw Error(ErrorCode::LengthMismatch, "X, y and clusters differ in length");
  }
  checked_inverse_xtx(X);
  std::size_t G = 0;
  const auto cl = dense_clusters(clusters, &G);
  const auto k = X.cols();
  const auto n = static_cast<double>(X.rows());
  MatrixXd sx = MatrixXd::Zero(k, static_cast<Eigen::Index>(G));
  VectorXd sy = VectorXd::Zero(static_cast<Eigen::Index>(G));
  VectorXd ng = VectorXd::Zero(static_cast<Eigen::Index>(G));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto g = static_cast<Eigen::Index>(cl[static_cast<std::size_t>(i)]);
    sx.col(g) += X.row(i).transpose();
    sy(g) += y(i);
    ng(g) += 1.0;
  }
  const MatrixXd xtx = X.transpose() * X;
  const VectorXd xty = X.transpose() * y;
  const double yty = y.squaredNorm();

  struct Eval {
    VectorXd beta;
    MatrixXd xwx;
    double sigma_e2 = 0.0;
    double loglik = 0.0;
  };
  auto evaluate = [&](double lambda) {
    Eval e;
    e.xwx = xtx;
    VectorXd xwy = xty;
    double logdet = 0.0;
    VectorXd w(static_cast<Eigen::Index>(G));
    for (Eigen::Index g = 0; g < static_cast<Eigen::Index>(G); ++g) {
      w(g) = lambda / (1.0 + lambda * ng(g));
      e.xwx.noalias() -= w(g) * sx.col(g) * sx.col(g).transpose();
      xwy -= w(g) * sy(g) * sx.col(g);
      logdet += std::log1p(lambda * ng(g));
    }
    e.beta = e.xwx.ldlt().solve(xwy);
    double rwr = yty - 2.0 * e.beta.dot(xty) + e.beta.dot(xtx * e.beta);
    for (Eigen::Index g = 0; g < static_cast<Eigen::Index>(G); ++g) {
      const double rg = sy(g) - sx.col(g).dot(e.beta);
      rwr -= w(g) * rg * rg;
    }
    e.sigma_e2 = std::max(rwr / n, 1e-300);
    e.loglik = -0.5 * (n * std::log(2.0 * M_PI * e.sigma_e2) + n + logdet);
    return e;
  };

  // lambda = s / (1 - s) maps the bounded search interval onto [0, ~1e6]
  auto lambda_of = [](double s) { return s / (1.0 - s); };
  const auto [s_best, neg_ll] = boost::math::tools::brent_find_minima(
      [&](double s) { return -evaluate(lambda_of(s)).loglik; }, 0.0, 1.0 - 1e-6, 52);
  Eval best = evaluate(lambda_of(s_best));
  double lambda = lambda_of(s_best);
  const Eval at_zero = evaluate(0.0);
  if (at_zero.loglik >= best.loglik) {
    best = at_zero;
    lambda = 0.0;
  }
  RandomInterceptResult r;
  r.beta = best.beta;
  const MatrixXd cov = best.sigma_e2 * best.xwx.ldlt().solve(MatrixXd::Identity(k, k));
  r.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  r.sigma_e2 = best.sigma_e2;
  r.sigma_u2 = lambda * best.sigma_e2;
  r.log_likelihood = best.loglik;
  return r;
}

std::string to_string(ModeratorMethod m) {
  return m == ModeratorMethod::ClusterRobustOls ? "cluster_robust_ols" : "random_intercept_ml";
}

double ModeratorFit::coef(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::EmptySelection, "no coefficient named " + name);
  return beta[static_cast<std::size_t>(it - names.begin())];
}

double ModeratorFit::p_value(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::EmptySelection, "no coefficient named " + name);
  return p_values[static_cast<std::size_t>(it - names.begin())];
}

nlohmann::json ModeratorFit::to_json() const {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    coefs.push_back({{"term", names[j]}, {"beta", beta[j]}, {"std_error", std_errors[j]}, {"p_value", p_values[j]}});
  }
  nlohmann::json j = {{"method", to_string(method)}, {"n", n}, {"cluster_count", cluster_count}, {"coefficients", coefs}};
  j["student_variance"] = student_variance ? nlohmann::json(*student_variance) : nlohmann::json(nullptr);
  return j;
}

ModeratorFit fit_moderator_model(std::span<const double> cates, const MatrixXd& moderators,
                                 const std::vector<std::string>& names, std::span<const std::string> clusters,
                                 ModeratorMethod method) {
  const auto n = static_cast<Eigen::Index>(cates.size());
  if (moderators.rows() != n || static_cast<std::size_t>(moderators.cols()) != names.size()) {
    throw Error(ErrorCode::LengthMismatch, "moderator matrix does not match cates or names");
  }
  MatrixXd X(n, moderators.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(moderators.cols()) = moderators;
  const VectorXd y = Eigen::Map<const VectorXd>(cates.data(), n);

  ModeratorFit fit;
  fit.method = method;
  fit.names.push_back("intercept");
  fit.names.insert(fit.names.end(), names.begin(), names.end());
  fit.n = cates.size();
  std::size_t G = 0;
  dense_clusters(clusters, &G);
  fit.cluster_count = G;
  if (method == ModeratorMethod::ClusterRobustOls) {
    const auto r = ols_cluster_robust(X, y, clusters);
    fit.beta.assign(r.beta.data(), r.beta.data() + r.beta.size());
    fit.std_errors.assign(r.se.data(), r.se.data() + r.se.size());
    fit.p_values.assign(r.p.data(), r.p.data() + r.p.size());
  } else {
    const auto r = fit_random_intercept(X, y, clusters);
    fit.beta.assign(r.beta.data(), r.beta.data() + r.beta.size());
    fit.std_errors.assign(r.se.data(), r.se.data() + r.se.size());
    for (Eigen::Index j = 0; j < r.beta.size(); ++j) {
      fit.p_values.push_back(r.se(j) > 0.0 ? normal_two_sided_p(r.beta(j) / r.se(j)) : 1.0);
    }
    fit.student_variance = r.sigma_u2;
  }
  return fit;
}

std::vector<double> zscore(std::span<const double> v) {
  if (v.empty()) return {};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, "cannot standardize a constant column");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

// ---------------------------------------------------------------------------
// quartiles

double order_statistic_quantile(std::span<const double> v, double p) {
  if (v.empty()) throw Error(ErrorCode::EmptySelection, "quantile of an empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(p * n - 1e-12)));
  return s[std::min(k, s.size()) - 1];
}

QuartileContrastTable quartile_contrasts(std::span<const double> cates, std::span<const double> variable,
                                         std::span<const std::string> clusters, const std::string& name) {
  if (cates.size() != variable.size() || cates.size() != clusters.size()) {
    throw Error(ErrorCode::LengthMismatch, "cates, moderator and clusters differ in length");
  }
  QuartileContrastTable table;
  table.variable = name;
  table.q25 = order_statistic_quantile(variable, 0.25);
  table.q50 = order_statistic_quantile(variable, 0.50);
  table.q75 = order_statistic_quantile(variable, 0.75);
  auto bin_of = [&](double x) {
    if (x <= table.q25) return 0;
    if (x <= table.q50) return 1;
    if (x <= table.q75) return 2;
    return 3;
  };
  std::array<std::size_t, 4> counts{};
  for (double x : variable) ++counts[static_cast<std::size_t>(bin_of(x))];

  // empty bins fold into the next non-empty one (or the previous, at the top end)
  std::array<int, 4> target{};
  std::vector<std::string> labels;
  std::string pending;
  std::vector<int> members;
  for (int b = 0; b < 4; ++b) {
    const std::string label = "Q" + std::to_string(b + 1);
    if (counts[static_cast<std::size_t>(b)] == 0) {
      pending += (pending.empty() ? "" : "+") + label;
      table.merged = true;
      target[static_cast<std::size_t>(b)] = -1;
      continue;
    }
    labels.push_back(pending.empty() ? label : pending + "+" + label);
    pending.clear();
    target[static_cast<std::size_t>(b)] = static_cast<int>(labels.size()) - 1;
  }
  if (!pending.empty() && !labels.empty()) labels.back() += "+" + pending;
  if (labels.size() < 2) {
    throw Error(ErrorCode::DegenerateQuartiles, name + ": ties leave fewer than two non-empty quartile bins");
  }

  const auto n = static_cast<Eigen::Index>(cates.size());
  const auto B = static_cast<Eigen::Index>(labels.size());
  MatrixXd X = MatrixXd::Zero(n, B);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, target[static_cast<std::size_t>(bin_of(variable[static_cast<std::size_t>(i)]))]) = 1.0;
    y(i) = 100.0 * cates[static_cast<std::size_t>(i)];
  }
  const auto fit = ols_cluster_robust(X, y, clusters);
  for (Eigen::Index b = 0; b < B; ++b) {
    QuartileBin bin;
    bin.label = labels[static_cast<std::size_t>(b)];
    bin.lo = INFINITY;
    bin.hi = -INFINITY;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (X(i, b) == 1.0) {
        ++bin.n;
        bin.lo = std::min(bin.lo, variable[static_cast<std::size_t>(i)]);
        bin.hi = std::max(bin.hi, variable[static_cast<std::size_t>(i)]);
      }
    }
    bin.mean = fit.beta(b);
    bin.ci_low = bin.mean - 1.96 * fit.se(b);
    bin.ci_high = bin.mean + 1.96 * fit.se(b);
    table.bins.push_back(bin);
  }
  std::vector<double> raw_p;
  for (Eigen::Index a = 0; a < B; ++a) {
    for (Eigen::Index b = a + 1; b < B; ++b) {
      QuartileContrast c;
      c.a = labels[static_cast<std::size_t>(a)];
      c.b = labels[static_cast<std::size_t>(b)];
      c.difference = fit.beta(b) - fit.beta(a);
      c.std_error = std::sqrt(std::max(0.0, fit.vcov(a, a) + fit.vcov(b, b) - 2.0 * fit.vcov(a, b)));
      c.p_value = c.std_error > 0.0 ? t_two_sided_p(c.difference / c.std_error, fit.dof) : 1.0;
      raw_p.push_back(c.p_value);
      table.contrasts.push_back(c);
    }
  }
  const auto adjusted = bonferroni(raw_p, raw_p.size());
  for (std::size_t i = 0; i < adjusted.size(); ++i) table.contrasts[i].p_value_adjusted = adjusted[i];
  return table;
}

nlohmann::json QuartileContrastTable::to_json() const {
  nlohmann::json bins_j = nlohmann::json::array();
  for (const auto& b : bins) {
    bins_j.push_back({{"label", b.label}, {"lo", b.lo}, {"hi", b.hi}, {"n", b.n},
                      {"mean_pp", b.mean}, {"ci_low_pp", b.ci_low}, {"ci_high_pp", b.ci_high}});
  }
  nlohmann::json con = nlohmann::json::array();
  for (const auto& c : contrasts) {
    con.push_back({{"a", c.a}, {"b", c.b}, {"difference_pp", c.difference}, {"std_error_pp", c.std_error},
                   {"p_value", c.p_value}, {"p_value_adjusted", c.p_value_adjusted}});
  }
  return {{"variable", variable}, {"q25", q25}, {"q50", q50}, {"q75", q75}, {"merged", merged},
          {"correction", correction}, {"bins", bins_j}, {"contrasts", con}};
}

std::string QuartileContrastTable::to_csv() const {
  std::string out = "quartile,mean,ci_low,ci_high\n";
  for (const auto& b : bins) out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", b.label, b.mean, b.ci_low, b.ci_high);
  return out;
}

std::string QuartileContrastTable::to_markdown() const {
  std::string out = fmt::format("**{}** (edges {:.4g} / {:.4g} / {:.4g})\n\n", variable, q25, q50, q75);
  out += "| Bin | Range | n | Mean CATE (pp) | 95% CI |\n|---|---|---:|---:|---|\n";
  for (const auto& b : bins) {
    out += fmt::format("| {} | [{:.4g}, {:.4g}] | {} | {:.2f} | [{:.2f}, {:.2f}] |\n", b.label, b.lo, b.hi, b.n, b.mean,
                       b.ci_low, b.ci_high);
  }
  out += "\n| Contrast | Difference (pp) | SE | p | p (Bonferroni) |\n|---|---:|---:|---:|---:|\n";
  for (const auto& c : contrasts) {
    out += fmt::format("| {} vs {} | {:.2f} | {:.2f} | {:.4f} | {:.4f} |\n", c.b, c.a, c.difference, c.std_error,
                       c.p_value, c.p_value_adjusted);
  }
  if (merged) out += "\nTied values left some quartile bins empty; they were merged with a neighbour.\n";
  return out;
}

// ---------------------------------------------------------------------------
// sensitivity

namespace {

double rv_from_f(double f) {
  if (f <= 0.0) return 0.0;
  const double f2 = f * f;
  return 0.5 * (std::sqrt(f2 * f2 + 4.0 * f2) - f2);
}

}  // namespace

double robustness_value(double t, double dof, double q) {
  if (!(dof > 0.0)) throw Error(ErrorCode::ConfigError, "robustness value needs dof > 0");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::ConfigError, "robustness value needs q in (0,1]");
  return rv_from_f(q * std::abs(t) / std::sqrt(dof));
}

double robustness_value_alpha(double t, double dof, double q, double alpha) {
  if (!(dof > 1.0)) throw Error(ErrorCode::ConfigError, "robustness value at alpha needs dof > 1");
  const boost::math::students_t_distribution<double> dist(dof - 1.0);
  const double t_crit = boost::math::quantile(boost::math::complement(dist, alpha / 2.0));
  const double f_crit = t_crit / std::sqrt(dof - 1.0);
  const double f_q = q * std::abs(t) / std::sqrt(dof);
  return rv_from_f(f_q - f_crit);
}

double partial_r2(double t, double dof) { return t * t / (t * t + dof); }

SensitivityReport robustness_report(double t, double dof, double q) {
  SensitivityReport r;
  r.t_statistic = t;
  r.dof = dof;
  r.q = q;
  r.f_q = q * std::abs(t) / std::sqrt(dof);
  r.rv_q = robustness_value(t, dof, q);
  r.rv_q_alpha = dof > 1.0 ? robustness_value_alpha(t, dof, q) : 0.0;
  return r;
}

nlohmann::json SensitivityReport::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& c : benchmarks) {
    b.push_back({{"name", c.name}, {"partial_r2_treatment", c.r2_with_treatment},
                 {"partial_r2_outcome", c.r2_with_outcome}, {"rv_ratio", c.ratio}});
  }
  return {{"t_statistic", t_statistic}, {"dof", dof}, {"q", q}, {"f_q", f_q},
          {"rv_q", rv_q}, {"rv_q_alpha_0.05", rv_q_alpha}, {"benchmarks", b}};
}

SensitivityReport sensitivity_analysis(const MatrixXd& X, const std::vector<std::string>& names,
                                       std::span<const double> y, std::span<const double> z,
                                       const std::vector<std::string>& benchmark_names, double q) {
  const auto n = X.rows();
  if (static_cast<std::size_t>(n) != y.size() || y.size() != z.size()) {
    throw Error(ErrorCode::LengthMismatch, "sensitivity inputs differ in length");
  }
  // constant columns (e.g. a dummy with no members in this sample) would make the design singular
  std::vector<Eigen::Index> keep;
  std::vector<std::string> kept_names;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (n > 0 && X.col(j).maxCoeff() > X.col(j).minCoeff()) {
      keep.push_back(j);
      kept_names.push_back(names.at(static_cast<std::size_t>(j)));
    }
  }
  const auto p = static_cast<Eigen::Index>(keep.size());
  MatrixXd Xk(n, p);
  for (Eigen::Index k = 0; k < p; ++k) Xk.col(k) = X.col(keep[static_cast<std::size_t>(k)]);

  MatrixXd outcome_design(n, p + 2);
  outcome_design.col(0).setOnes();
  outcome_design.col(1) = Eigen::Map<const VectorXd>(z.data(), n);
  outcome_design.rightCols(p) = Xk;
  const auto outcome_fit = ols_iid(outcome_design, Eigen::Map<const VectorXd>(y.data(), n));
  SensitivityReport r = robustness_report(outcome_fit.t(1), outcome_fit.dof, q);

  MatrixXd treat_design(n, p + 1);
  treat_design.col(0).setOnes();
  treat_design.rightCols(p) = Xk;
  const auto treat_fit = ols_iid(treat_design, Eigen::Map<const VectorXd>(z.data(), n));
  for (const auto& b : benchmark_names) {
    auto it = std::find(kept_names.begin(), kept_names.end(), b);
    if (it == kept_names.end()) continue;
    const auto j = static_cast<Eigen::Index>(it - kept_names.begin());
    BenchmarkCovariate c;
    c.name = b;
    c.r2_with_outcome = partial_r2(outcome_fit.t(j + 2), outcome_fit.dof);
    c.r2_with_treatment = partial_r2(treat_fit.t(j + 1), treat_fit.dof);
    const double strongest = std::max(c.r2_with_outcome, c.r2_with_treatment);
    c.ratio = strongest > 0.0 ? r.rv_q / strongest : INFINITY;
    r.benchmarks.push_back(c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// overlap

OverlapReport overlap_report(std::span<const double> e_hat, double lo, double hi, std::size_t n_bins) {
  if (e_hat.empty()) throw Error(ErrorCode::EmptySelection, "overlap report of an empty sample");
  OverlapReport r;
  r.lo = lo;
  r.hi = hi;
  r.n = e_hat.size();
  r.counts.assign(n_bins, 0);
  for (std::size_t b = 0; b <= n_bins; ++b) r.edges.push_back(static_cast<double>(b) / static_cast<double>(n_bins));
  r.min = INFINITY;
  r.max = -INFINITY;
  for (double e : e_hat) {
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(std::max(0.0, e) * static_cast<double>(n_bins)));
    ++r.counts[b];
    r.min = std::min(r.min, e);
    r.max = std::max(r.max, e);
    r.below += e < lo ? 1 : 0;
    r.above += e > hi ? 1 : 0;
  }
  r.q05 = order_statistic_quantile(e_hat, 0.05);
  r.q95 = order_statistic_quantile(e_hat, 0.95);
  return r;
}

nlohmann::json OverlapReport::to_json() const {
  return {{"n", n}, {"min", min}, {"max", max}, {"central_90", {q05, q95}}, {"bounds", {lo, hi}},
          {"below_lo", below}, {"above_hi", above}, {"histogram", {{"edges", edges}, {"counts", counts}}}};
}

std::string OverlapReport::to_markdown() const {
  std::string out = fmt::format(
      "Propensity scores range from {:.3f} to {:.3f}; 90% of units fall in [{:.3f}, {:.3f}]. "
      "{} below {:.2f}, {} above {:.2f} (n = {}).\n\n| Bin | Count |\n|---|---:|\n",
      min, max, q05, q95, below, lo, above, hi, n);
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b]) out += fmt::format("| [{:.2f}, {:.2f}) | {} |\n", edges[b], edges[b + 1], counts[b]);
  }
  return out;
}

TrimResult trim_by_propensity(std::span<const double> e_hat, double lo, double hi) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw Error(ErrorCode::ConfigError, "trim bounds need 0 <= lo < hi <= 1");
  TrimResult t;
  t.report = overlap_report(e_hat, lo, hi);
  for (std::size_t i = 0; i < e_hat.size(); ++i) {
    if (e_hat[i] >= lo && e_hat[i] <= hi) t.kept.push_back(i);
  }
  if (t.kept.empty()) throw Error(ErrorCode::EmptyAfterTrim, fmt::format("no unit has e_hat in [{}, {}]", lo, hi));
  return t;
}

// ---------------------------------------------------------------------------
// effect runs

EffectRun run_effect(const AnalyticRows& rows, Outcome outcome, const CausalFitOptions& options,
                     const std::map<std::string, StudentContext>* context) {
  EffectRun run;
  run.outcome = outcome;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (outcome_of(rows[i], outcome)) run.selected.push_back(i);
  }
  if (run.selected.empty()) throw Error(ErrorCode::EmptySelection, "no rows carry the " + to_string(outcome) + " outcome");
  run.design = design_matrix(rows, run.selected, context);
  std::vector<double> y, z;
  std::vector<std::string> clusters;
  for (auto i : run.selected) {
    y.push_back(*outcome_of(rows[i], outcome) ? 1.0 : 0.0);
    z.push_back(static_cast<double>(rows[i].z));
    clusters.push_back(rows[i].student_id);
  }
  run.fit = fit_causal(run.design.X, y, z, clusters, options);
  run.fit.ate.outcome = run.fit.att.outcome = to_string(outcome);
  if (outcome == Outcome::Placebo) run.fit.ate.estimand = Estimand::PlaceboATE;
  return run;
}

EffectRun run_placebo(const AnalyticRows& rows, const CausalFitOptions& options, double min_coverage) {
  std::size_t present = 0, treated = 0;
  for (const auto& r : rows) {
    if (r.y_placebo) {
      ++present;
      treated += r.z ? 1 : 0;
    }
  }
  const double coverage = rows.empty() ? 0.0 : static_cast<double>(present) / static_cast<double>(rows.size());
  if (present == 0 || coverage < min_coverage || treated == 0 || treated == present) {
    throw Error(ErrorCode::InsufficientPlaceboCoverage,
                fmt::format("placebo outcome present on {} of {} rows ({} treated); minimum coverage {}", present,
                            rows.size(), treated, min_coverage));
  }
  return run_effect(rows, Outcome::Placebo, options);
}

std::string to_string(Variant v) {
  return v == Variant::ExternalCovariates ? "external_covariates" : "washout_controls";
}

EffectRun run_variant(Variant variant, const VariantInputs& in, Outcome outcome, const CausalFitOptions& options) {
  EffectRun run;
  if (variant == Variant::ExternalCovariates) {
    if (in.log.context().empty()) throw Error(ErrorCode::MissingContext, "external covariate variant needs student context");
    run = run_effect(in.primary_rows, outcome, options, &in.log.context());
  } else {
    SamplePolicy policy = in.policy;
    policy.control_mode = ControlMode::Washout;
    const auto samples = build_samples(in.log, policy);
    const auto rows = extract_features(in.model, combine(samples), in.log);
    run = run_effect(rows, outcome, options);
  }
  run.fit.ate.variant = run.fit.att.variant = to_string(variant);
  return run;
}

}  // namespace tfx
