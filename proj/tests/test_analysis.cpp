#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tutorfx/analysis.hpp"
#include "tutorfx/error.hpp"

namespace tfx {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<std::string> pairs_of_clusters(std::size_t n, std::size_t per = 2) {
  std::vector<std::string> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back("s" + std::to_string(i / per));
  return c;
}

TEST(Moderator, ConstantCatesGiveInterceptOnly) {
  std::vector<double> cates(40, 0.07);
  MatrixXd m(40, 1);
  for (int i = 0; i < 40; ++i) m(i, 0) = std::sin(i * 1.3);
  const auto fit = fit_moderator_model(cates, m, {"mod"}, pairs_of_clusters(40));
  EXPECT_NEAR(fit.coef("intercept"), 0.07, 1e-12);
  EXPECT_NEAR(fit.coef("mod"), 0.0, 1e-12);
  EXPECT_EQ(fit.cluster_count, 20u);
  EXPECT_EQ(fit.names.front(), "intercept");
}

TEST(Moderator, SlopeRecoveredAsNoiseShrinks) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const std::size_t n = 300;
  const auto clusters = pairs_of_clusters(n, 5);
  MatrixXd m(n, 1);
  for (std::size_t i = 0; i < n; ++i) m(static_cast<Eigen::Index>(i), 0) = nd(rng);
  std::vector<double> cluster_noise(n / 5);
  for (auto& u : cluster_noise) u = nd(rng);
  double prev_err = INFINITY;
  for (double scale : {1.0, 0.1, 0.01, 0.0}) {
    std::vector<double> cates(n);
    for (std::size_t i = 0; i < n; ++i) cates[i] = 2.0 * m(static_cast<Eigen::Index>(i), 0) + scale * cluster_noise[i / 5];
    const auto fit = fit_moderator_model(cates, m, {"x"}, clusters);
    const double err = std::abs(fit.coef("x") - 2.0);
    EXPECT_LE(err, prev_err + 1e-15);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 1e-12);
}

TEST(Moderator, RankDeficientDesignThrows) {
  MatrixXd m(10, 2);
  for (int i = 0; i < 10; ++i) {
    m(i, 0) = i;
    m(i, 1) = 2.0 * i;
  }
  std::vector<double> cates(10, 1.0);
  try {
    fit_moderator_model(cates, m, {"a", "b"}, pairs_of_clusters(10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficientDesign);
  }
}

TEST(Moderator, JsonCarriesMethodAndTerms) {
  std::vector<double> cates{0.1, 0.2, 0.15, 0.3, 0.05, 0.25};
  MatrixXd m(6, 1);
  m << 1, 2, 3, 4, 5, 6;
  const auto j = fit_moderator_model(cates, m, {"x"}, pairs_of_clusters(6, 1)).to_json();
  EXPECT_EQ(j["method"], "cluster_robust_ols");
  EXPECT_EQ(j["coefficients"].size(), 2u);
  EXPECT_TRUE(j["student_variance"].is_null());
}

TEST(Ols, SingletonClustersMatchIidForInterceptOnly) {
  // One column: CR1 with G = n and its small-sample factor reduces to s^2 / n exactly.
  VectorXd y(7);
  y << 0.3, -1.2, 2.5, 0.9, 0.0, 1.7, -0.4;
  const MatrixXd X = MatrixXd::Ones(7, 1);
  const auto iid = ols_iid(X, y);
  const auto cr1 = ols_cluster_robust(X, y, pairs_of_clusters(7, 1));
  EXPECT_NEAR(cr1.se(0), iid.se(0), 1e-12);
  // with the factor switched off it is the HC0 variance, smaller by (n-1)/n
  const auto hc0 = ols_cluster_robust(X, y, pairs_of_clusters(7, 1), false);
  EXPECT_NEAR(hc0.se(0) * hc0.se(0), iid.se(0) * iid.se(0) * 6.0 / 7.0, 1e-12);
}

TEST(Ols, ClusterSandwichByHand) {
  // two clusters of two rows, intercept + slope
  MatrixXd X(4, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3;
  VectorXd y(4);
  y << 1.0, 2.5, 2.0, 4.5;
  const std::vector<std::string> cl{"a", "a", "b", "b"};
  const auto r = ols_cluster_robust(X, y, cl);
  const MatrixXd inv = (X.transpose() * X).inverse();
  const VectorXd beta = inv * X.transpose() * y;
  const VectorXd u = y - X * beta;
  const Eigen::RowVector2d sa = u(0) * X.row(0) + u(1) * X.row(1);
  const Eigen::RowVector2d sb = u(2) * X.row(2) + u(3) * X.row(3);
  const MatrixXd meat = sa.transpose() * sa + sb.transpose() * sb;
  const double c = 2.0 / 1.0 * 3.0 / 2.0;
  const MatrixXd v = c * inv * meat * inv;
  EXPECT_NEAR(r.beta(1), beta(1), 1e-12);
  EXPECT_NEAR(r.se(0), std::sqrt(v(0, 0)), 1e-12);
  EXPECT_NEAR(r.se(1), std::sqrt(v(1, 1)), 1e-12);
  EXPECT_EQ(r.n_clusters, 2u);
  EXPECT_DOUBLE_EQ(r.dof, 1.0);
}

TEST(RandomIntercept, ZeroBetweenVarianceReproducesOls) {
  // residuals cancel inside every cluster, so the ML variance ratio sits on the boundary
  const std::size_t G = 30;
  MatrixXd X(2 * G, 2);
  VectorXd y(2 * G);
  std::vector<std::string> cl;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (std::size_t g = 0; g < G; ++g) {
    const double x = nd(rng);
    const double d = 0.5 + std::abs(nd(rng));
    for (int s : {0, 1}) {
      const auto i = static_cast<Eigen::Index>(2 * g + static_cast<std::size_t>(s));
      X(i, 0) = 1.0;
      X(i, 1) = x;
      y(i) = 1.0 + 2.0 * x + (s ? d : -d);
      cl.push_back("g" + std::to_string(g));
    }
  }
  const auto ri = fit_random_intercept(X, y, cl);
  const auto ols = ols_iid(X, y);
  EXPECT_NEAR(ri.beta(0), ols.beta(0), 1e-8);
  EXPECT_NEAR(ri.beta(1), ols.beta(1), 1e-8);
  EXPECT_NEAR(ri.sigma_u2, 0.0, 1e-8);
}

TEST(RandomIntercept, RecoversClusterVariance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  const std::size_t G = 400, per = 6;
  MatrixXd X(G * per, 2);
  VectorXd y(G * per);
  std::vector<std::string> cl;
  for (std::size_t g = 0; g < G; ++g) {
    const double u = 1.5 * nd(rng);
    for (std::size_t s = 0; s < per; ++s) {
      const auto i = static_cast<Eigen::Index>(g * per + s);
      X(i, 0) = 1.0;
      X(i, 1) = nd(rng);
      y(i) = 0.5 - 1.0 * X(i, 1) + u + nd(rng);
      cl.push_back("g" + std::to_string(g));
    }
  }
  const auto ri = fit_random_intercept(X, y, cl);
  EXPECT_NEAR(ri.sigma_u2, 2.25, 0.45);
  EXPECT_NEAR(ri.sigma_e2, 1.0, 0.1);
  EXPECT_NEAR(ri.beta(1), -1.0, 0.05);

  MatrixXd m = X.rightCols(1);
  std::vector<double> cates(y.data(), y.data() + y.size());
  const auto fit = fit_moderator_model(cates, m, {"x"}, cl, ModeratorMethod::RandomInterceptMl);
  ASSERT_TRUE(fit.student_variance.has_value());
  EXPECT_NEAR(*fit.student_variance, ri.sigma_u2, 1e-12);
  for (double p : fit.p_values) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Zscore, StandardizesAndRejectsConstant) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto z = zscore(v);
  double mean = 0, ss = 0;
  for (double x : z) mean += x;
  for (double x : z) ss += x * x;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(ss / 4.0, 1.0, 1e-12);
  const std::vector<double> c{2, 2, 2};
  EXPECT_THROW(zscore(c), Error);
}

TEST(Quartiles, MessageCountEdges) {
  const std::vector<double> msgs{30, 5, 14, 9, 40, 23, 12, 18};
  EXPECT_EQ(order_statistic_quantile(msgs, 0.25), 9.0);
  EXPECT_EQ(order_statistic_quantile(msgs, 0.50), 14.0);
  EXPECT_EQ(order_statistic_quantile(msgs, 0.75), 23.0);

  const std::vector<double> cates{0.1, 0.0, 0.2, 0.05, 0.3, 0.1, 0.02, 0.15};
  const auto t = quartile_contrasts(cates, msgs, pairs_of_clusters(8, 1), "messages_total");
  EXPECT_EQ(t.q25, 9.0);
  EXPECT_EQ(t.q50, 14.0);
  EXPECT_EQ(t.q75, 23.0);
  ASSERT_EQ(t.bins.size(), 4u);
  std::size_t total = 0;
  for (const auto& b : t.bins) total += b.n;
  EXPECT_EQ(total, msgs.size());
  // Q1 holds 5 and 9; Q4 holds 30 and 40
  EXPECT_EQ(t.bins[0].lo, 5.0);
  EXPECT_EQ(t.bins[0].hi, 9.0);
  EXPECT_EQ(t.bins[3].lo, 30.0);
  EXPECT_NEAR(t.bins[0].mean, 2.5, 1e-9);  // percentage points
  EXPECT_EQ(t.contrasts.size(), 6u);
  EXPECT_FALSE(t.merged);
  EXPECT_EQ(t.to_csv().substr(0, 28), "quartile,mean,ci_low,ci_high");
}

TEST(Quartiles, TiesMergeBins) {
  // three quarters of the sample share one value, so Q2 and Q3 are empty
  std::vector<double> v(12, 1.0);
  for (std::size_t i = 9; i < 12; ++i) v[i] = 2.0 + static_cast<double>(i);
  const std::vector<double> cates(12, 0.1);
  const auto t = quartile_contrasts(cates, v, pairs_of_clusters(12, 1), "ties");
  EXPECT_TRUE(t.merged);
  ASSERT_EQ(t.bins.size(), 2u);
  EXPECT_EQ(t.bins[0].n + t.bins[1].n, 12u);

  const std::vector<double> flat(12, 4.0);
  try {
    quartile_contrasts(cates, flat, pairs_of_clusters(12, 1), "flat");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateQuartiles);
  }
}

TEST(Quartiles, NullRarelySignificant) {
  int clean = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> nd;
    const std::size_t n = 400;
    std::vector<double> cates(n), var(n);
    for (std::size_t i = 0; i < n; ++i) {
      cates[i] = 0.04 + 0.03 * nd(rng);
      var[i] = std::floor(20.0 + 8.0 * nd(rng));
    }
    const auto t = quartile_contrasts(cates, var, pairs_of_clusters(n, 4), "null");
    bool any = false;
    for (const auto& c : t.contrasts) any = any || c.p_value_adjusted < 0.05;
    clean += any ? 0 : 1;
  }
  EXPECT_GE(clean, 18);
}

TEST(Quartiles, MonotoneShowsTopMinusBottom) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  const std::size_t n = 400;
  std::vector<double> cates(n), var(n);
  for (std::size_t i = 0; i < n; ++i) {
    var[i] = 10.0 + 5.0 * nd(rng);
    cates[i] = 0.01 * var[i] + 0.02 * nd(rng);
  }
  const auto t = quartile_contrasts(cates, var, pairs_of_clusters(n, 4), "mono");
  const auto& c = t.contrasts[2];
  ASSERT_EQ(c.a, "Q1");
  ASSERT_EQ(c.b, "Q4");
  EXPECT_GT(c.difference, 0.0);
  EXPECT_LT(c.p_value_adjusted, 0.05);
}

// Confounder strength at which the bias-adjusted estimate reaches zero when both
// partial R^2 values equal r: |t| = sqrt(dof) * r / sqrt(1 - r). Solved by bisection.
double rv_by_root_finding(double t, double dof) {
  double lo = 0.0, hi = 1.0 - 1e-15;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double bias_t = std::sqrt(dof) * mid / std::sqrt(1.0 - mid);
    (bias_t < std::abs(t) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TEST(Robustness, ClosedFormMatchesRootFinding) {
  EXPECT_EQ(robustness_value(0.0, 100.0), 0.0);
  const auto r = robustness_report(4.0, 100.0);
  EXPECT_NEAR(r.f_q, 0.4, 1e-15);
  EXPECT_NEAR(r.rv_q, 0.328, 5e-4);
  EXPECT_NEAR(r.rv_q, rv_by_root_finding(4.0, 100.0), 1e-12);
  for (double t : {0.5, 2.0, 7.5, 30.0}) {
    for (double dof : {10.0, 500.0, 40000.0}) {
      EXPECT_NEAR(robustness_value(t, dof), rv_by_root_finding(t, dof), 1e-10) << t << " " << dof;
    }
  }
  // q scales the effect to explain away
  EXPECT_NEAR(robustness_value(4.0, 100.0, 0.5), rv_by_root_finding(2.0, 100.0), 1e-12);
}

TEST(Robustness, MonotoneInT) {
  double prev = -1.0;
  for (double t = 0.0; t <= 20.0; t += 0.25) {
    const double rv = robustness_value(t, 250.0);
    EXPECT_GT(rv, prev);
    EXPECT_GE(rv, 0.0);
    EXPECT_LE(rv, 1.0);
    EXPECT_EQ(rv, robustness_value(-t, 250.0));
    prev = rv;
  }
}

TEST(Robustness, AlphaVersionSitsOnSignificanceBoundary) {
  // With both partial R^2 equal to RV_alpha the adjusted t equals the critical value.
  const double t = 6.0, dof = 200.0;
  const double rv = robustness_value_alpha(t, dof);
  ASSERT_GT(rv, 0.0);
  const double adjusted_t = std::sqrt(dof - 1.0) * (t / std::sqrt(dof) - rv / std::sqrt(1.0 - rv));
  EXPECT_NEAR(adjusted_t, 1.971956544249395, 1e-9);  // t quantile 0.975 at 199 dof
  EXPECT_EQ(robustness_value_alpha(1.0, dof), 0.0);
}

TEST(Robustness, BadArgumentsRejected) {
  EXPECT_THROW(robustness_value(1.0, 0.0), Error);
  EXPECT_THROW(robustness_value(1.0, 10.0, 0.0), Error);
  EXPECT_THROW(robustness_value(1.0, 10.0, 1.5), Error);
}

TEST(Robustness, SensitivityAnalysisFromRegression) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  const Eigen::Index n = 500;
  MatrixXd X(n, 3);
  std::vector<double> y(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = nd(rng);
    X(i, 1) = nd(rng);
    X(i, 2) = 1.0;  // constant, dropped
    z[static_cast<std::size_t>(i)] = X(i, 0) + nd(rng) > 0.0 ? 1.0 : 0.0;
    y[static_cast<std::size_t>(i)] = 0.5 * z[static_cast<std::size_t>(i)] + 2.0 * X(i, 0) + nd(rng);
  }
  const auto r = sensitivity_analysis(X, {"strong", "weak", "const"}, y, z, {"strong", "weak", "const"});
  EXPECT_GT(r.t_statistic, 3.0);
  EXPECT_DOUBLE_EQ(r.dof, static_cast<double>(n - 4));
  ASSERT_EQ(r.benchmarks.size(), 2u);
  EXPECT_GT(r.benchmarks[0].r2_with_outcome, r.benchmarks[1].r2_with_outcome);
  EXPECT_GT(r.benchmarks[0].r2_with_treatment, r.benchmarks[1].r2_with_treatment);
  EXPECT_NEAR(r.rv_q, robustness_value(r.t_statistic, r.dof), 1e-15);
}

TEST(Overlap, HistogramAndBounds) {
  const std::vector<double> e{0.03, 0.1, 0.12, 0.5, 0.89, 0.2, 0.97};
  const auto r = overlap_report(e, 0.05, 0.95);
  std::size_t mass = 0;
  for (auto c : r.counts) mass += c;
  EXPECT_EQ(mass, e.size());
  EXPECT_EQ(r.min, 0.03);
  EXPECT_EQ(r.max, 0.97);
  EXPECT_LE(r.min, r.max);
  EXPECT_EQ(r.below, 1u);
  EXPECT_EQ(r.above, 1u);
  EXPECT_EQ(r.edges.size(), r.counts.size() + 1);
}

TEST(Trim, IdentityAndDrops) {
  const std::vector<double> e{0.03, 0.1, 0.5, 0.97, 1.0, 0.0};
  EXPECT_EQ(trim_by_propensity(e, 0.0, 1.0).kept.size(), e.size());
  const std::vector<double> half(9, 0.5);
  EXPECT_EQ(trim_by_propensity(half, 0.1, 0.9).kept.size(), 9u);
  const auto t = trim_by_propensity(e, 0.05, 0.95);
  EXPECT_EQ(t.kept, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(t.report.below, 2u);
  EXPECT_EQ(t.report.above, 2u);
  try {
    trim_by_propensity(half, 0.6, 0.9);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::EmptyAfterTrim);
  }
  EXPECT_THROW(trim_by_propensity(half, 0.9, 0.1), Error);
}

TEST(Placebo, MissingPreTreatmentOutcomeRejected) {
  AnalyticRows rows(10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].student_id = "s" + std::to_string(i);
    rows[i].z = i % 2 == 0;
    rows[i].y_next = true;
  }
  try {
    run_placebo(rows, CausalFitOptions{}, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientPlaceboCoverage);
  }
  // present on 4 of 10 rows is below a 0.5 floor
  for (std::size_t i = 0; i < 4; ++i) rows[i].y_placebo = i % 3 == 0;
  EXPECT_THROW(run_placebo(rows, CausalFitOptions{}, 0.5), Error);
}

TEST(Variants, ExternalCovariatesNeedContext) {
  const auto log = testing::make_log({testing::ev("a", 1, "p1", "k1", true)});
  const DktModel model;
  const AnalyticRows rows;
  const VariantInputs in{log, model, SamplePolicy{}, rows};
  try {
    run_variant(Variant::ExternalCovariates, in, Outcome::Immediate, CausalFitOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingContext);
  }
  EXPECT_EQ(to_string(Variant::WashoutControls), "washout_controls");
}

TEST(Variants, ExternalCovariatesAppendContextColumns) {
  const auto sim = simulate_population(testing::small_sim(400, 8));
  // a small pipeline on the simulated log, with a short DKT
  SamplePolicy policy;
  const auto samples = build_samples(sim.log, policy);
  DktConfig dk;
  dk.epochs = 2;
  dk.hidden_dim = 16;
  const auto model = train_dkt(samples.holdout, dk);
  const auto rows = extract_features(model, combine(samples), sim.log);
  CausalFitOptions opt;
  opt.nuisance_forest.n_trees = 40;
  opt.causal_forest.n_trees = 40;
  const auto primary = run_effect(rows, Outcome::Immediate, opt);
  const auto ext = run_variant(Variant::ExternalCovariates, VariantInputs{sim.log, model, policy, rows},
                               Outcome::Immediate, opt);
  EXPECT_GT(ext.design.X.cols(), primary.design.X.cols());
  EXPECT_EQ(ext.selected, primary.selected);
  EXPECT_EQ(ext.fit.ate.variant, "external_covariates");
  EXPECT_TRUE(std::isfinite(ext.fit.ate.estimate));
}

}  // namespace
}  // namespace tfx
