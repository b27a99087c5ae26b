#include "tutorfx/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tutorfx/error.hpp"
#include "tutorfx/parallel.hpp"
#include "tutorfx/rng.hpp"

namespace tfx {

double EffectFn::operator()(double mastery) const {
  switch (kind) {
    case Kind::Zero: return 0.0;
    case Kind::Constant: return c;
    case Kind::LinearInMastery: return a + b * mastery;
  }
  return 0.0;
}

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (n_students == 0) fail("n_students must be positive");
  if (n_skills == 0 || n_problems < n_skills) fail("need n_problems >= n_skills >= 1");
  if (seq_len_min < 4) fail("seq_len_range.min must be >= 4");
  if (seq_len_max < seq_len_min) fail("seq_len_range.max < seq_len_range.min");
  if (!(ability_sd >= 0.0) || !(difficulty_sd >= 0.0) || !(item_difficulty_sd >= 0.0)) {
    fail("standard deviations must be nonnegative");
  }
  if (!(selection_strength >= 0.0)) fail("selection_strength must be >= 0");
  if (!(base_treat_prob > 0.0 && base_treat_prob < 1.0)) fail("base_treat_prob must be in (0,1)");
  if (!(outcome_noise > 0.0)) fail("outcome_noise must be positive");
  if (!(max_success_prob > 0.0 && max_success_prob < 1.0)) fail("max_success_prob must be in (0,1)");
  if (!(help_access_fraction > 0.0 && help_access_fraction <= 1.0)) {
    fail("help_access_fraction must be in (0,1]");
  }
  if (skill_block_min == 0 || skill_block_max < skill_block_min) fail("bad skill block range");
  if (n_schools == 0) fail("n_schools must be positive");
  if (!(pretest_missing_rate >= 0.0 && pretest_missing_rate < 1.0)) fail("bad pretest_missing_rate");
  if (!(low_ses_rate >= 0.0 && low_ses_rate <= 1.0)) fail("bad low_ses_rate");
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json effect_json;
  switch (effect.kind) {
    case EffectFn::Kind::Zero: effect_json = {{"kind", "zero"}}; break;
    case EffectFn::Kind::Constant: effect_json = {{"kind", "constant"}, {"c", effect.c}}; break;
    case EffectFn::Kind::LinearInMastery:
      effect_json = {{"kind", "linear_in_mastery"}, {"a", effect.a}, {"b", effect.b}};
      break;
  }
  return {{"n_students", n_students},
          {"n_problems", n_problems},
          {"n_skills", n_skills},
          {"seq_len_min", seq_len_min},
          {"seq_len_max", seq_len_max},
          {"ability_mean", ability_mean},
          {"ability_sd", ability_sd},
          {"learning_rate", learning_rate},
          {"difficulty_mean", difficulty_mean},
          {"difficulty_sd", difficulty_sd},
          {"item_difficulty_sd", item_difficulty_sd},
          {"selection_strength", selection_strength},
          {"base_treat_prob", base_treat_prob},
          {"effect", effect_json},
          {"outcome_noise", outcome_noise},
          {"max_success_prob", max_success_prob},
          {"help_access_fraction", help_access_fraction},
          {"min_gap", min_gap},
          {"carryover_theta", carryover_theta},
          {"skill_block_min", skill_block_min},
          {"skill_block_max", skill_block_max},
          {"n_schools", n_schools},
          {"pretest_missing_rate", pretest_missing_rate},
          {"low_ses_rate", low_ses_rate},
          {"seed", seed}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("n_students", c.n_students);
  read("n_problems", c.n_problems);
  read("n_skills", c.n_skills);
  read("seq_len_min", c.seq_len_min);
  read("seq_len_max", c.seq_len_max);
  read("ability_mean", c.ability_mean);
  read("ability_sd", c.ability_sd);
  read("learning_rate", c.learning_rate);
  read("difficulty_mean", c.difficulty_mean);
  read("difficulty_sd", c.difficulty_sd);
  read("item_difficulty_sd", c.item_difficulty_sd);
  read("selection_strength", c.selection_strength);
  read("base_treat_prob", c.base_treat_prob);
  read("outcome_noise", c.outcome_noise);
  read("max_success_prob", c.max_success_prob);
  read("help_access_fraction", c.help_access_fraction);
  read("min_gap", c.min_gap);
  read("carryover_theta", c.carryover_theta);
  read("skill_block_min", c.skill_block_min);
  read("skill_block_max", c.skill_block_max);
  read("n_schools", c.n_schools);
  read("pretest_missing_rate", c.pretest_missing_rate);
  read("low_ses_rate", c.low_ses_rate);
  read("seed", c.seed);
  if (j.contains("effect")) {
    const auto& e = j.at("effect");
    const auto kind = e.at("kind").get<std::string>();
    if (kind == "zero") {
      c.effect = EffectFn::zero();
    } else if (kind == "constant") {
      c.effect = EffectFn::constant(e.at("c").get<double>());
    } else if (kind == "linear_in_mastery") {
      c.effect = EffectFn::linear_in_mastery(e.at("a").get<double>(), e.at("b").get<double>());
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown effect kind '" + kind + "'");
    }
  }
  return c;
}

std::string unit_id_for(const std::string& student_id, std::int64_t seq_index) {
  return student_id + ":" + std::to_string(seq_index);
}

const UnitTruth* GroundTruth::find(const std::string& unit_id) const {
  if (index_.size() != units.size()) {
    index_.clear();
    for (std::size_t i = 0; i < units.size(); ++i) index_.emplace(units[i].unit_id, i);
  }
  auto it = index_.find(unit_id);
  return it == index_.end() ? nullptr : &units[it->second];
}

bool GroundTruth::operator==(const GroundTruth& other) const {
  if (units.size() != other.units.size() || ability != other.ability ||
      problem_difficulty != other.problem_difficulty) {
    return false;
  }
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& a = units[i];
    const auto& b = other.units[i];
    if (a.unit_id != b.unit_id || a.outcome_seq != b.outcome_seq || a.tutored != b.tutored ||
        a.eligible != b.eligible || a.p_anchor != b.p_anchor || a.e != b.e || a.m != b.m ||
        a.tau != b.tau || a.y0 != b.y0 || a.y1 != b.y1 || a.skill_outcome_seq != b.skill_outcome_seq ||
        a.tau_skill != b.tau_skill || a.y0_skill != b.y0_skill || a.y1_skill != b.y1_skill) {
      return false;
    }
  }
  return true;
}

void GroundTruth::write_jsonl(std::ostream& out) const {
  for (const auto& u : units) {
    nlohmann::ordered_json j;
    j["unit_id"] = u.unit_id;
    j["tau"] = u.tau;
    j["e"] = u.e;
    j["m"] = u.m;
    j["tutored"] = u.tutored;
    j["eligible"] = u.eligible;
    j["outcome_seq"] = u.outcome_seq;
    j["y0"] = u.y0;
    j["y1"] = u.y1;
    j["p_anchor"] = u.p_anchor;
    if (u.skill_outcome_seq) {
      j["skill_outcome_seq"] = *u.skill_outcome_seq;
      j["tau_skill"] = u.tau_skill;
      j["y0_skill"] = u.y0_skill;
      j["y1_skill"] = u.y1_skill;
    }
    out << j.dump() << '\n';
  }
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string padded(const char* prefix, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, value);
  return buf;
}

struct StudentResult {
  std::vector<InteractionEvent> events;
  std::vector<SessionMeta> sessions;
  StudentContext context;
  std::vector<UnitTruth> units;
  std::vector<double> ability;
};

double draw_beta(Rng& rng, double alpha, double beta) {
  const double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
  const double y = std::gamma_distribution<double>(beta, 1.0)(rng);
  return x / (x + y);
}

// Effect delivered by a session `distance` attempts before an attempt with
// untreated success probability `mastery`.
double contribution(const EffectFn& f, std::int64_t distance, double mastery) {
  if (distance == 1) return f(mastery);
  if (distance == 2) return 0.5 * f(mastery);
  return 0.0;
}

// q = base + boost clamped to [0,1]; returns the exact effect when no clamp is hit.
double shifted_effect(double base_q, double delta) {
  const double with = base_q + delta;
  if (with > 1.0) return 1.0 - base_q;
  if (with < 0.0) return -base_q;
  return delta;
}

StudentResult simulate_student(const SimConfig& cfg, std::size_t s,
                               const std::vector<double>& difficulty) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
  StudentResult out;
  const std::string student_id = padded("s", s, 5);
  const int skill_width = 3;
  const int problem_width = 5;

  std::normal_distribution<double> normal(0.0, 1.0);
  const double theta0 = cfg.ability_mean + cfg.ability_sd * normal(rng);
  const bool access = uniform01(rng) < cfg.help_access_fraction;
  const std::size_t len =
      std::uniform_int_distribution<std::size_t>(cfg.seq_len_min, cfg.seq_len_max)(rng);

  // Context (pretest tracks initial ability).
  out.context.student_id = student_id;
  {
    const double z = cfg.ability_sd > 0 ? (theta0 - cfg.ability_mean) / cfg.ability_sd : 0.0;
    const double pretest = 220.0 + 12.0 * z + 6.0 * normal(rng);
    if (uniform01(rng) >= cfg.pretest_missing_rate) out.context.pretest_score = pretest;
    const double g = uniform01(rng);
    out.context.gender = g < 0.49 ? Gender::A : g < 0.98 ? Gender::B : Gender::C;
    out.context.low_ses_flag = uniform01(rng) < cfg.low_ses_rate;
    out.context.school_id = padded("sch", std::uniform_int_distribution<std::size_t>(
                                              0, cfg.n_schools - 1)(rng), 2);
  }

  // Problem sequence: blocks of attempts on one skill, then a jump to another skill.
  const std::size_t S = cfg.n_skills;
  std::vector<std::size_t> problem(len), skill(len);
  std::size_t current = std::uniform_int_distribution<std::size_t>(0, S - 1)(rng);
  std::size_t block_left =
      std::uniform_int_distribution<std::size_t>(cfg.skill_block_min, cfg.skill_block_max)(rng);
  for (std::size_t t = 0; t < len; ++t) {
    if (block_left == 0) {
      if (S > 1) current = (current + 1 + std::uniform_int_distribution<std::size_t>(0, S - 2)(rng)) % S;
      block_left =
          std::uniform_int_distribution<std::size_t>(cfg.skill_block_min, cfg.skill_block_max)(rng);
    }
    const std::size_t count = (cfg.n_problems - current + S - 1) / S;
    problem[t] = current + S * std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
    skill[t] = current;
    --block_left;
  }

  // Common random numbers: one outcome draw and one selection draw per attempt.
  std::vector<double> u(len), v(len);
  for (std::size_t t = 0; t < len; ++t) {
    u[t] = uniform01(rng);
    v[t] = uniform01(rng);
  }

  std::vector<double> p_base(len), q(len), e(len);
  std::vector<bool> tutored(len, false), eligible(len, false), correct(len, false);
  std::int64_t last_tutor = -1;
  std::size_t n_sessions = 0;
  out.ability.resize(len);
  for (std::size_t t = 0; t < len; ++t) {
    const double theta = theta0 + cfg.learning_rate * static_cast<double>(t) +
                         cfg.carryover_theta * static_cast<double>(n_sessions);
    out.ability[t] = theta;
    p_base[t] = cfg.max_success_prob * logistic((theta - difficulty[problem[t]]) / cfg.outcome_noise);
    e[t] = std::clamp(cfg.base_treat_prob + cfg.selection_strength * (1.0 - p_base[t]), 0.01, 0.95);

    double boost = 0.0;
    for (std::int64_t d = 1; d <= 2; ++d) {
      const std::int64_t k = static_cast<std::int64_t>(t) - d;
      if (k >= 0 && tutored[static_cast<std::size_t>(k)]) boost += contribution(cfg.effect, d, p_base[t]);
    }
    q[t] = std::clamp(p_base[t] + boost, 0.0, 1.0);
    correct[t] = u[t] < q[t];

    eligible[t] = access && (last_tutor < 0 ||
                             static_cast<std::int64_t>(t) - last_tutor > static_cast<std::int64_t>(cfg.min_gap));
    tutored[t] = eligible[t] && v[t] < e[t];
    if (tutored[t]) {
      last_tutor = static_cast<std::int64_t>(t);
      ++n_sessions;
    }
  }

  // Events and sessions.
  std::int64_t ts = 1'700'000'000'000LL +
                    static_cast<std::int64_t>(std::uniform_int_distribution<std::int64_t>(0, 1'000'000'000LL)(rng));
  std::lognormal_distribution<double> messages(std::log(14.0), 0.695);
  std::lognormal_distribution<double> duration(std::log(4.2), 0.78);
  std::size_t prior = 0;
  for (std::size_t t = 0; t < len; ++t) {
    InteractionEvent ev;
    ev.student_id = student_id;
    ev.seq_index = static_cast<std::int64_t>(t);
    ev.timestamp = ts;
    ev.problem_id = padded("p", problem[t], problem_width);
    ev.skill_id = padded("k", skill[t], skill_width);
    ev.correct = correct[t];
    ev.tutored = tutored[t];
    if (tutored[t]) {
      SessionMeta meta;
      meta.session_id = student_id + "-t" + std::to_string(t);
      meta.messages_total = std::max<std::int64_t>(2, std::llround(messages(rng)));
      meta.tutor_messages =
          std::binomial_distribution<std::int64_t>(meta.messages_total, 0.6)(rng);
      meta.student_messages = meta.messages_total - meta.tutor_messages;
      meta.duration_minutes = duration(rng);
      meta.student_word_share = draw_beta(rng, 2.5, 6.0);
      meta.prior_session_count = static_cast<std::int64_t>(prior++);
      ev.session_id = meta.session_id;
      out.sessions.push_back(std::move(meta));
    }
    out.events.push_back(std::move(ev));
    ts += std::uniform_int_distribution<std::int64_t>(20'000, 600'000)(rng);
  }

  // Units: every attempt followed by an untutored attempt.
  auto boost_excluding = [&](std::size_t o, std::size_t anchor) {
    double b = 0.0;
    for (std::int64_t d = 1; d <= 2; ++d) {
      const std::int64_t k = static_cast<std::int64_t>(o) - d;
      if (k >= 0 && static_cast<std::size_t>(k) != anchor && tutored[static_cast<std::size_t>(k)]) {
        b += contribution(cfg.effect, d, p_base[o]);
      }
    }
    return b;
  };
  for (std::size_t t = 0; t + 1 < len; ++t) {
    std::size_t o = t + 1;
    while (o < len && tutored[o]) ++o;
    if (o >= len) continue;
    UnitTruth unit;
    unit.unit_id = unit_id_for(student_id, static_cast<std::int64_t>(t));
    unit.student = s;
    unit.seq_index = static_cast<std::int64_t>(t);
    unit.outcome_seq = static_cast<std::int64_t>(o);
    unit.tutored = tutored[t];
    unit.eligible = eligible[t];
    unit.p_anchor = p_base[t];
    unit.e = e[t];

    const double q0 = std::clamp(p_base[o] + boost_excluding(o, t), 0.0, 1.0);
    const double delta = contribution(cfg.effect, static_cast<std::int64_t>(o - t), p_base[o]);
    unit.tau = shifted_effect(q0, delta);
    const double q1 = q0 + unit.tau;
    unit.y0 = u[o] < q0;
    unit.y1 = u[o] < q1;
    const double e_eff = eligible[t] ? e[t] : 0.0;
    unit.m = e_eff * q1 + (1.0 - e_eff) * q0;

    for (std::size_t k = t + 1; k < len; ++k) {
      if (!tutored[k] && skill[k] != skill[t]) {
        unit.skill_outcome_seq = static_cast<std::int64_t>(k);
        const double qs0 = std::clamp(p_base[k] + boost_excluding(k, t), 0.0, 1.0);
        const double ds = contribution(cfg.effect, static_cast<std::int64_t>(k - t), p_base[k]);
        unit.tau_skill = shifted_effect(qs0, ds);
        unit.y0_skill = u[k] < qs0;
        unit.y1_skill = u[k] < qs0 + unit.tau_skill;
        break;
      }
    }
    out.units.push_back(std::move(unit));
  }
  return out;
}

}  // namespace

Simulation simulate_population(const SimConfig& cfg) {
  cfg.validate();
  std::vector<double> skill_difficulty(cfg.n_skills);
  std::vector<double> difficulty(cfg.n_problems);
  {
    Rng rng(derive_seed(cfg.seed, std::string_view("problems")));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& d : skill_difficulty) d = cfg.difficulty_mean + cfg.difficulty_sd * normal(rng);
    for (std::size_t j = 0; j < cfg.n_problems; ++j) {
      difficulty[j] = skill_difficulty[j % cfg.n_skills] + cfg.item_difficulty_sd * normal(rng);
    }
  }

  std::vector<StudentResult> results(cfg.n_students);
  parallel_for(cfg.n_students,
               [&](std::size_t s) { results[s] = simulate_student(cfg, s, difficulty); });

  std::vector<InteractionEvent> events;
  std::map<std::string, SessionMeta> sessions;
  std::map<std::string, StudentContext> context;
  Simulation sim;
  sim.truth.problem_difficulty = difficulty;
  for (auto& r : results) {
    for (auto& ev : r.events) events.push_back(std::move(ev));
    for (auto& meta : r.sessions) sessions.emplace(meta.session_id, std::move(meta));
    context.emplace(r.context.student_id, std::move(r.context));
    for (auto& u : r.units) sim.truth.units.push_back(std::move(u));
    sim.truth.ability.push_back(std::move(r.ability));
  }
  const std::size_t n = events.size();
  sim.log = EventLog::build(std::move(events), std::move(sessions), std::move(context),
                            Provenance{"simulator seed=" + std::to_string(cfg.seed), {n, n, 0, 0}});
  return sim;
}

double oracle_ate(const GroundTruth& gt, const std::function<bool(const UnitTruth&)>& filter) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& u : gt.units) {
    if (!filter(u)) continue;
    sum += u.tau;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptySelection, "no units satisfy the predicate");
  return sum / static_cast<double>(n);
}

double oracle_ate(const GroundTruth& gt, const std::vector<std::string>& unit_ids) {
  if (unit_ids.empty()) throw Error(ErrorCode::EmptySelection, "empty unit list");
  double sum = 0.0;
  for (const auto& id : unit_ids) {
    const auto* u = gt.find(id);
    if (!u) throw Error(ErrorCode::EmptySelection, "unit " + id + " has no ground truth");
    sum += u->tau;
  }
  return sum / static_cast<double>(unit_ids.size());
}

double naive_log_difference(const EventLog& log) {
  double sum_t = 0.0, sum_c = 0.0;
  std::size_t n_t = 0, n_c = 0;
  for (std::size_t s = 0; s < log.students().size(); ++s) {
    auto events = log.student_events(s);
    for (std::size_t t = 0; t < events.size(); ++t) {
      std::size_t o = t + 1;
      while (o < events.size() && events[o].tutored) ++o;
      if (o >= events.size()) continue;
      const double y = events[o].correct ? 1.0 : 0.0;
      if (events[t].tutored) {
        sum_t += y;
        ++n_t;
      } else {
        sum_c += y;
        ++n_c;
      }
    }
  }
  if (n_t == 0 || n_c == 0) throw Error(ErrorCode::EmptySelection, "need treated and untreated attempts");
  return sum_t / static_cast<double>(n_t) - sum_c / static_cast<double>(n_c);
}

}  // namespace tfx
