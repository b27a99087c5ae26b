#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tutorfx/dkt.hpp"
#include "tutorfx/error.hpp"
#include "tutorfx/sampler.hpp"

using namespace tfx;
using tfx::testing::ev;

namespace {

EventLog tiny_log() {
  std::vector<InteractionEvent> events;
  const char* skills[] = {"k1", "k2", "k1", "k3", "k2"};
  for (int i = 0; i < 5; ++i) events.push_back(ev("a", i, "p" + std::to_string(i % 3), skills[i], i % 2 == 0));
  for (int i = 0; i < 4; ++i) events.push_back(ev("b", i, "p" + std::to_string(i), skills[i], i != 1));
  return tfx::testing::make_log(events);
}

DktConfig small_cfg() {
  DktConfig c;
  c.hidden_dim = 4;
  c.embed_dim = 3;
  c.seed = 3;
  return c;
}

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return wins / pairs;
}

}  // namespace

TEST(Auc, PerfectAndConstant) {
  const std::vector<double> s = {0, 1, 1, 0};
  const std::vector<int> y = {0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 1.0);
  const std::vector<double> c(4, 0.3);
  EXPECT_DOUBLE_EQ(roc_auc(c, y), 0.5);
}

TEST(Auc, MatchesPairwiseBruteForce) {
  const std::vector<double> s = {0.9, 0.2, 0.6, 0.6, 0.1, 0.75};
  const std::vector<int> y = {1, 0, 1, 0, 0, 1};
  EXPECT_NEAR(roc_auc(s, y), brute_auc(s, y), 1e-12);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> coin(0, 1), level(0, 9);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> ss;
    std::vector<int> yy = {0, 1};
    ss = {static_cast<double>(level(rng)), static_cast<double>(level(rng))};
    for (int i = 0; i < 40; ++i) {
      ss.push_back(level(rng));  // many ties
      yy.push_back(coin(rng));
    }
    ASSERT_NEAR(roc_auc(ss, yy), brute_auc(ss, yy), 1e-10);
  }
}

TEST(Auc, SingleClassIsDegenerate) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<int> y = {1, 1};
  EXPECT_THROW(roc_auc(s, y), Error);
}

TEST(Dkt, ZeroParametersPredictOneHalf) {
  auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(tiny_log()));
  m.parameters().setZero();
  const auto seq = m.encode(tiny_log().student_events(0));
  for (double p : m.predict(seq)) EXPECT_DOUBLE_EQ(p, 0.5);
  EXPECT_NEAR(m.loss(std::span<const DktSequence>(&seq, 1)), std::log(2.0), 1e-12);
}

TEST(Dkt, GradientCheckAtRandomInit) {
  const auto log = tiny_log();
  const auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(log));
  const auto seq = m.encode(log.student_events(0));
  ASSERT_EQ(seq.tokens.size(), 5u);
  const double fine = grad_check(m, seq, 1e-5);
  EXPECT_LT(fine, 1e-4);
  EXPECT_GT(grad_check(m, seq, 1e-1), fine);
}

TEST(Dkt, GradientCheckWithSaturatedGates) {
  const auto log = tiny_log();
  auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(log));
  const auto& L = m.layout();
  auto& th = m.parameters();
  // input/forget/output gates pinned open, cell input small: nearly linear in the parameters
  th.segment(static_cast<Eigen::Index>(L.off_W), static_cast<Eigen::Index>(L.off_b - L.off_W)) *= 1e-3;
  for (std::size_t r = 0; r < 3 * L.hidden; ++r) th(static_cast<Eigen::Index>(L.off_b + r)) = 30.0;
  const auto seq = m.encode(log.student_events(0));
  EXPECT_LT(grad_check(m, seq, 1e-5), 1e-4);
}

TEST(Dkt, FitsAlternatingSequence) {
  std::vector<InteractionEvent> events;
  for (int i = 0; i < 30; ++i) events.push_back(ev("solo", i, "p", "k", i % 2 == 0));
  const auto log = tfx::testing::make_log(events);
  DktConfig c = small_cfg();
  c.hidden_dim = 8;
  c.learning_rate = 0.02;
  c.epochs = 200;
  const auto m = train_dkt(log, c);
  const auto seq = m.encode(log.student_events(0));
  EXPECT_LT(m.loss(std::span<const DktSequence>(&seq, 1)), 0.693);
  EXPECT_EQ(m.curve().size(), 200u);
}

TEST(Dkt, SerializationRoundTrip) {
  const auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(tiny_log()));
  tfx::testing::TempDir dir("dkt");
  m.save(dir.path() / "m.json");
  const auto back = DktModel::load(dir.path() / "m.json");
  EXPECT_TRUE(back == m);
  const auto seq = m.encode(tiny_log().student_events(1));
  EXPECT_EQ(back.predict(seq), m.predict(seq));
}

TEST(Dkt, UnknownItemsMapToReservedSlot) {
  const auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(tiny_log()));
  EXPECT_EQ(m.vocab().item_index("never-seen"), 0);
  std::vector<InteractionEvent> events = {ev("z", 1, "nope", "k1", true), ev("z", 2, "p1", "nope", true)};
  std::size_t ui = 0, us = 0;
  m.encode(events, &ui, &us);
  EXPECT_EQ(ui, 1u);
  EXPECT_EQ(us, 1u);
}

TEST(Dkt, HeldOutAucOnLearnableSimulation) {
  auto cfg = tfx::testing::small_sim(600, 21);
  cfg.help_access_fraction = 0.5;
  const auto sim = simulate_population(cfg);
  const auto samples = build_samples(sim.log, {});
  DktConfig c;
  c.epochs = 12;
  const auto m = train_dkt(samples.holdout, c);
  std::vector<std::string> control;
  for (const auto& r : samples.control) {
    if (control.empty() || control.back() != r.student_id) control.push_back(r.student_id);
  }
  EXPECT_GE(evaluate_auc(m, sim.log.subset(control)), 0.70);
}

TEST(Features, InitialStateAndPriorAccuracyAtFirstAttempt) {
  const auto log = tiny_log();
  const auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(log));
  AnalyticRow r;
  r.unit_id = "a:0";
  r.student_id = "a";
  r.anchor_seq = 0;
  r.anchor_skill = "k1";
  const auto out = extract_features(m, {r}, log);
  ASSERT_TRUE(out[0].features.has_value());
  for (double h : out[0].features->h) EXPECT_EQ(h, 0.0);
  EXPECT_EQ(out[0].features->cum_accuracy, 0.5);
}

TEST(Features, ReplayOracleAndDuplicateRows) {
  const auto log = tiny_log();
  const auto m = DktModel::initialize(small_cfg(), DktVocab::from_log(log));
  AnalyticRow r;
  r.unit_id = "a:3";
  r.student_id = "a";
  r.anchor_seq = 3;
  r.anchor_skill = "k3";
  r.y_next_skill = "k2";
  const auto out = extract_features(m, {r, r}, log);
  EXPECT_EQ(out[0].features, out[1].features);
  // replay the forward pass on the truncated history only
  const auto events = log.student_events(0);
  const auto seq = m.encode(events.subspan(0, 3));
  const Eigen::MatrixXd H = m.hidden_states(seq);
  const Eigen::VectorXd h = H.col(3);
  ASSERT_EQ(out[0].features->h.size(), static_cast<std::size_t>(h.size()));
  for (Eigen::Index k = 0; k < h.size(); ++k) EXPECT_DOUBLE_EQ(out[0].features->h[static_cast<std::size_t>(k)], h(k));
  EXPECT_DOUBLE_EQ(out[0].features->p_current, m.predict_skill(h, m.vocab().skill_index("k3")));
  EXPECT_DOUBLE_EQ(out[0].features->p_next, m.predict_skill(h, m.vocab().skill_index("k2")));
  EXPECT_DOUBLE_EQ(out[0].features->cum_accuracy, 2.0 / 3.0);
}

TEST(Dkt, ConfigValidation) {
  DktConfig c;
  c.hidden_dim = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), Error);
}
