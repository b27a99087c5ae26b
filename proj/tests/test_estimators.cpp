#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tutorfx/error.hpp"
#include "tutorfx/estimators.hpp"

using namespace tfx;

namespace {

// Independent cluster-robust variance of a mean: V = G/(G-1) * sum_g (sum_i (s_i - mean))^2 / n^2.
double cluster_se(const std::vector<double>& s, const std::vector<std::string>& cl) {
  double mean = 0;
  for (double v : s) mean += v;
  mean /= s.size();
  std::map<std::string, double> g;
  for (std::size_t i = 0; i < s.size(); ++i) g[cl[i]] += s[i] - mean;
  double ss = 0;
  for (auto& [k, v] : g) ss += v * v;
  const double G = g.size(), n = s.size();
  return std::sqrt(G / (G - 1) * ss / (n * n));
}

}  // namespace

TEST(Residualize, Examples) {
  const std::vector<double> y = {1, 0, 1, 0}, z = {1, 1, 0, 0};
  NuisanceEstimates nu{{0.7, 0.2, 0.4, 0.9}, {0.3, 0.6, 0.5, 0.1}};
  const auto r = residualize(y, z, nu);
  const double ey[] = {0.3, -0.2, 0.6, -0.9}, ez[] = {0.7, 0.4, -0.5, -0.1};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(r.y_tilde[i], ey[i], 1e-15);
    EXPECT_NEAR(r.z_tilde[i], ez[i], 1e-15);
  }
  NuisanceEstimates flat{{0, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5}};
  const auto f = residualize(y, z, flat);
  EXPECT_EQ(f.y_tilde, y);
  for (double v : f.z_tilde) EXPECT_EQ(std::abs(v), 0.5);
}

TEST(Aipw, ExactOutcomeModelGivesConstantWithZeroSe) {
  const double c = 0.05;
  std::vector<double> y, z, m, e, tau;
  std::vector<std::string> cl;
  for (int i = 0; i < 12; ++i) {
    const double ei = 0.2 + 0.05 * i, mi = 0.3 + 0.02 * i;
    const double zi = i % 3 == 0;
    e.push_back(ei);
    m.push_back(mi);
    z.push_back(zi);
    tau.push_back(c);
    y.push_back(zi ? mi + (1 - ei) * c : mi - ei * c);  // y equals m_Z(x)
    cl.push_back("s" + std::to_string(i / 2));
  }
  const auto ate = aipw_ate(y, z, {m, e}, tau, cl);
  EXPECT_NEAR(ate.estimate, 100 * c, 1e-12);
  EXPECT_NEAR(ate.std_error, 0.0, 1e-12);
}

TEST(Aipw, SixRowHandDataset) {
  const std::vector<double> y = {1, 0, 1, 1, 0, 0}, z = {1, 1, 0, 1, 0, 0};
  const std::vector<double> m = {0.6, 0.5, 0.4, 0.7, 0.3, 0.2}, e = {0.5, 0.4, 0.25, 0.8, 0.2, 0.5};
  const std::vector<double> tau = {0.1, 0.0, 0.2, -0.1, 0.05, 0.1};
  const std::vector<std::string> cl = {"a", "a", "b", "b", "c", "c"};
  // textbook form: mu1 - mu0 + Z (Y - mu1)/e - (1-Z)(Y - mu0)/(1-e)
  std::vector<double> g;
  for (int i = 0; i < 6; ++i) {
    const double mu1 = m[i] + (1 - e[i]) * tau[i], mu0 = m[i] - e[i] * tau[i];
    g.push_back(mu1 - mu0 + z[i] * (y[i] - mu1) / e[i] - (1 - z[i]) * (y[i] - mu0) / (1 - e[i]));
  }
  const auto scores = aipw_scores(y, z, {m, e}, tau);
  double mean = 0;
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(scores[i], g[i], 1e-14);
    mean += g[i] / 6;
  }
  const auto ate = aipw_ate(y, z, {m, e}, tau, cl);
  EXPECT_NEAR(ate.estimate, 100 * mean, 1e-12);
  EXPECT_NEAR(ate.std_error, 100 * cluster_se(g, cl), 1e-12);
  EXPECT_EQ(ate.n_clusters, 3u);
  EXPECT_NEAR(ate.ci_low, ate.estimate - 1.96 * ate.std_error, 1e-12);

  // ATT averages the treated units' scores
  const std::vector<double> gt = {g[0], g[1], g[3]};
  const auto att = aipw_att(y, z, {m, e}, tau, cl);
  EXPECT_NEAR(att.estimate, 100 * (gt[0] + gt[1] + gt[2]) / 3, 1e-12);
  EXPECT_EQ(att.n_units, 3u);
}

TEST(Aipw, AllTreatedAttEqualsAte) {
  const std::vector<double> y = {1, 0, 1, 1}, z = {1, 1, 1, 1}, m = {0.5, 0.5, 0.6, 0.4}, e = {0.9, 0.8, 0.7, 0.95};
  const std::vector<double> tau = {0.1, 0.2, 0.0, 0.05};
  const std::vector<std::string> cl = {"a", "b", "c", "d"};
  const auto ate = aipw_ate(y, z, {m, e}, tau, cl);
  const auto att = aipw_att(y, z, {m, e}, tau, cl);
  EXPECT_DOUBLE_EQ(ate.estimate, att.estimate);
  EXPECT_DOUBLE_EQ(ate.std_error, att.std_error);
}

TEST(Aipw, PropensityOutOfRangeAndNoTreated) {
  const std::vector<double> y = {1, 0}, z = {0, 0}, tau = {0, 0};
  const std::vector<std::string> cl = {"a", "b"};
  EXPECT_THROW(aipw_scores(y, z, {{0.5, 0.5}, {0.0, 0.5}}, tau), Error);
  try {
    aipw_att(y, z, {{0.5, 0.5}, {0.5, 0.5}}, tau, cl);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoTreatedUnits);
  }
}

TEST(Aipw, SingletonClustersReduceToHc0TimesCorrection) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<double> s;
  std::vector<std::string> cl;
  for (int i = 0; i < 50; ++i) {
    s.push_back(nd(rng));
    cl.push_back(std::to_string(i));
  }
  double mean = 0, ss = 0;
  for (double v : s) mean += v / 50;
  for (double v : s) ss += (v - mean) * (v - mean);
  // with one unit per cluster the estimator is the sample variance of the mean
  const auto est = summarize_scores(s, cl, Estimand::ATE);
  EXPECT_NEAR(est.std_error, 100 * std::sqrt(ss / 49 / 50), 1e-12);
}

TEST(Bonferroni, Examples) {
  const std::vector<double> p = {0.01};
  EXPECT_DOUBLE_EQ(bonferroni(p, 2)[0], 0.02);
  const std::vector<double> q = {0.9};
  EXPECT_DOUBLE_EQ(bonferroni(q, 3)[0], 1.0);
  const std::vector<double> f = {0.001, 0.04, 0.2, 0.5, 0.0101};
  const auto adj = bonferroni(f, 5);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(adj[i], std::min(1.0, 5 * f[i]), 1e-10);
  EXPECT_THROW(bonferroni(f, 0), Error);
}

TEST(Correlation, Examples) {
  const std::vector<double> a = {1, 4, 2, 8, 5, 7, 3, 3, 9, 0};
  std::vector<double> neg;
  for (double v : a) neg.push_back(-v);
  EXPECT_NEAR(cate_correlation(a, a), 1.0, 1e-12);
  EXPECT_NEAR(cate_correlation(a, neg), -1.0, 1e-12);
  const std::vector<double> b = {2.5, 3.1, 1.0, 7.7, 6.0, 5.5, 2.0, 4.1, 8.8, 1.2};
  // textbook formula: (n sum xy - sum x sum y) / sqrt((n sum x2 - (sum x)^2)(n sum y2 - (sum y)^2))
  double sx = 0, sy = 0, sxy = 0, sx2 = 0, sy2 = 0;
  const double n = 10;
  for (int i = 0; i < 10; ++i) {
    sx += a[i];
    sy += b[i];
    sxy += a[i] * b[i];
    sx2 += a[i] * a[i];
    sy2 += b[i] * b[i];
  }
  const double r = (n * sxy - sx * sy) / std::sqrt((n * sx2 - sx * sx) * (n * sy2 - sy * sy));
  EXPECT_NEAR(cate_correlation(a, b), r, 1e-10);
  const std::vector<double> flat(10, 1.0);
  EXPECT_THROW(cate_correlation(a, flat), Error);
}

TEST(Estimators, NormalPValue) {
  EXPECT_NEAR(normal_two_sided_p(1.959963984540054), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(normal_two_sided_p(0.0), 1.0);
}

TEST(Estimators, ClampPropensity) {
  const auto c = clamp_propensity({0.0, 0.5, 1.0}, 0.01, 0.99);
  EXPECT_EQ(c, (std::vector<double>{0.01, 0.5, 0.99}));
}

namespace {

struct Synthetic {
  Eigen::MatrixXd X;
  std::vector<double> y, z;
  std::vector<std::string> clusters;
};

// Confounded binary-outcome data: treatment more likely when success is less likely.
Synthetic confounded(std::size_t n, double effect, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_real_distribution<double> u01(0, 1);
  Synthetic s;
  s.X.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < 3; ++j) s.X(r, j) = u(rng);
    const double p = 0.5 + 0.3 * s.X(r, 0);
    const double e = 0.5 - 0.3 * s.X(r, 0);
    const double zi = u01(rng) < e;
    s.z.push_back(zi);
    s.y.push_back(u01(rng) < p + effect * zi);
    s.clusters.push_back("s" + std::to_string(i / 5));
  }
  return s;
}

CausalFitOptions quick_options(std::uint64_t seed) {
  CausalFitOptions o;
  o.nuisance_forest.n_trees = 60;
  o.causal_forest.n_trees = 60;
  o.nuisance_forest.seed = seed;
  o.causal_forest.seed = seed + 1;
  return o;
}

}  // namespace

TEST(FitCausal, ZeroEffectCoverageOverSeeds) {
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = confounded(1000, 0.0, 100 + seed);
    const auto fit = fit_causal(d.X, d.y, d.z, d.clusters, quick_options(seed));
    covered += std::abs(fit.ate.estimate) < 2 * fit.ate.std_error;
  }
  EXPECT_GE(covered, 18);
}

TEST(FitCausal, ConstantEffectAttAndAteAgree) {
  const auto d = confounded(3000, 0.1, 7);
  const auto fit = fit_causal(d.X, d.y, d.z, d.clusters, quick_options(3));
  EXPECT_TRUE(fit.ate.ci_low <= fit.att.ci_high && fit.att.ci_low <= fit.ate.ci_high);
  EXPECT_TRUE(fit.ate.covers(10.0)) << fit.ate.estimate;
  // naive comparison is confounded downward
  EXPECT_LT(naive_difference(d.y, d.z), 0.1 - 0.05);
  for (double e : fit.nuisance.e_hat) {
    ASSERT_GE(e, 0.01);
    ASSERT_LE(e, 0.99);
  }
}

TEST(FitCausal, ConstantEffectCateCentersOnTruth) {
  const auto d = confounded(3000, 0.1, 8);
  const auto fit = fit_causal(d.X, d.y, d.z, d.clusters, quick_options(4));
  double mean = 0;
  for (double t : fit.cate.values) mean += t / fit.cate.values.size();
  EXPECT_NEAR(mean, 0.1, 0.03);
}
