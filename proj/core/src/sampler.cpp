#include "tutorfx/sampler.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tutorfx/error.hpp"
#include "tutorfx/rng.hpp"
#include "tutorfx/simulator.hpp"

namespace tfx {

void SamplePolicy::validate() const {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "holdout_fraction must be in (0,1)");
  }
  if (placebo_offset < 1) throw Error(ErrorCode::ConfigError, "placebo_offset must be >= 1");
}

namespace {

struct Tally {
  std::set<std::string> students;
  std::size_t attempts = 0;
  std::set<std::string> problems;

  void add(const InteractionEvent& ev) {
    students.insert(ev.student_id);
    ++attempts;
    problems.insert(ev.problem_id);
  }
  void add_row(const AnalyticRow& row) {
    students.insert(row.student_id);
    ++attempts;
    problems.insert(row.anchor_problem);
  }
  FlowCounts counts() const { return {students.size(), attempts, problems.size()}; }
};

FlowCounts minus(const FlowCounts& a, const FlowCounts& b) {
  return {a.students - b.students, a.attempts - b.attempts, a.problems - b.problems};
}

// First attempt after `t` without help, optionally on a skill other than `avoid_skill`.
std::optional<std::size_t> next_untutored(std::span<const InteractionEvent> events, std::size_t t,
                                          const std::string* avoid_skill = nullptr) {
  for (std::size_t k = t + 1; k < events.size(); ++k) {
    if (events[k].tutored) continue;
    if (avoid_skill && events[k].skill_id == *avoid_skill) continue;
    return k;
  }
  return std::nullopt;
}

AnalyticRow make_row(const EventLog& log, std::span<const InteractionEvent> events, std::size_t t,
                     std::size_t outcome) {
  const auto& ev = events[t];
  AnalyticRow row;
  row.unit_id = unit_id_for(ev.student_id, ev.seq_index);
  row.student_id = ev.student_id;
  row.anchor_seq = ev.seq_index;
  row.anchor_problem = ev.problem_id;
  row.anchor_skill = ev.skill_id;
  row.z = ev.tutored ? 1 : 0;
  row.y_next = events[outcome].correct;
  row.y_next_seq = events[outcome].seq_index;
  row.y_next_skill = events[outcome].skill_id;
  if (auto k = next_untutored(events, t, &ev.skill_id)) {
    row.y_skill = events[*k].correct;
    row.y_skill_seq = events[*k].seq_index;
  }
  if (ev.tutored && ev.session_id) {
    auto it = log.sessions().find(*ev.session_id);
    if (it != log.sessions().end()) row.session = it->second;
  }
  return row;
}

}  // namespace

SampleSet build_samples(const EventLog& log, const SamplePolicy& policy) {
  policy.validate();
  SampleSet out;
  auto& flow = out.flow;

  std::vector<std::size_t> ever_treated, never_treated;
  Tally original, treat_all, control_all;
  for (std::size_t s = 0; s < log.students().size(); ++s) {
    auto events = log.student_events(s);
    const bool treated = std::any_of(events.begin(), events.end(),
                                     [](const InteractionEvent& e) { return e.tutored; });
    (treated ? ever_treated : never_treated).push_back(s);
    for (const auto& ev : events) {
      original.add(ev);
      (treated ? treat_all : control_all).add(ev);
    }
  }
  flow.original = original.counts();
  flow.treatment_all = treat_all.counts();
  flow.control_all = control_all.counts();
  if (ever_treated.empty()) {
    throw Error(ErrorCode::EmptyTreatmentSample, "no student in the log received tutoring");
  }

  // Treated candidates: each tutored attempt with a later untutored attempt.
  AnalyticRows treated;
  std::size_t no_outcome = 0, untutored_attempts = 0;
  for (std::size_t s : ever_treated) {
    auto events = log.student_events(s);
    for (std::size_t t = 0; t < events.size(); ++t) {
      if (!events[t].tutored) {
        ++untutored_attempts;
        continue;
      }
      auto o = next_untutored(events, t);
      if (!o) {
        ++no_outcome;
        continue;
      }
      treated.push_back(make_row(log, events, t, *o));
    }
  }

  // Seeded student-level split of the never-treated pool.
  std::vector<std::string> pool;
  for (std::size_t s : never_treated) pool.push_back(log.students()[s].student_id);
  Rng rng(derive_seed(policy.seed, std::string_view("holdout")));
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto n_holdout = static_cast<std::size_t>(
      std::llround(policy.holdout_fraction * static_cast<double>(pool.size())));
  if (n_holdout == 0 || n_holdout >= pool.size()) {
    throw Error(ErrorCode::DegenerateSplit,
                "never-treated pool of " + std::to_string(pool.size()) + " students gives holdout " +
                    std::to_string(n_holdout));
  }
  std::vector<std::string> holdout_ids(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  std::set<std::string> control_ids(pool.begin() + static_cast<std::ptrdiff_t>(n_holdout), pool.end());

  Tally holdout_tally, control_tally;
  AnalyticRows control;
  for (std::size_t s : never_treated) {
    const auto& id = log.students()[s].student_id;
    auto events = log.student_events(s);
    const bool is_control = control_ids.contains(id);
    for (std::size_t t = 0; t < events.size(); ++t) {
      (is_control ? control_tally : holdout_tally).add(events[t]);
      if (is_control && t + 1 < events.size()) control.push_back(make_row(log, events, t, t + 1));
    }
  }
  flow.holdout = holdout_tally.counts();
  flow.control_analysis = control_tally.counts();

  AnalyticRows washout;
  if (policy.control_mode == ControlMode::Washout) {
    for (std::size_t s : ever_treated) {
      auto events = log.student_events(s);
      std::optional<std::size_t> last_tutor;
      for (std::size_t t = 0; t < events.size(); ++t) {
        if (events[t].tutored) {
          last_tutor = t;
          continue;
        }
        if (!last_tutor) continue;
        std::set<std::string> skills;
        for (std::size_t k = *last_tutor; k < t; ++k) skills.insert(events[k].skill_id);
        if (skills.size() <= policy.washout_k_skills) continue;
        auto o = next_untutored(events, t);
        if (!o) continue;
        AnalyticRow row = make_row(log, events, t, *o);
        row.washout_admitted = true;
        washout.push_back(std::move(row));
      }
    }
  }

  // Restrict both arms to problems they share.
  std::size_t treated_off_problem = 0;
  if (policy.restrict_to_treated_problems) {
    std::set<std::string> treated_problems;
    for (const auto& r : treated) treated_problems.insert(r.anchor_problem);
    auto off = [&](const AnalyticRow& r) { return !treated_problems.contains(r.anchor_problem); };
    std::erase_if(control, off);
    std::erase_if(washout, off);
    std::set<std::string> control_problems;
    for (const auto& r : control) control_problems.insert(r.anchor_problem);
    for (const auto& r : washout) control_problems.insert(r.anchor_problem);
    const std::size_t before = treated.size();
    std::erase_if(treated, [&](const AnalyticRow& r) { return !control_problems.contains(r.anchor_problem); });
    treated_off_problem = before - treated.size();
  }
  if (treated.empty()) throw Error(ErrorCode::EmptyTreatmentSample, "no treated row survived sample construction");
  if (control.empty() && washout.empty()) {
    throw Error(ErrorCode::DegenerateSplit, "control sample is empty after problem overlap filtering");
  }

  Tally treat_final, control_final_nt, washout_tally;
  for (const auto& r : treated) treat_final.add_row(r);
  for (const auto& r : control) control_final_nt.add_row(r);
  for (const auto& r : washout) washout_tally.add_row(r);
  flow.treatment_final = treat_final.counts();
  flow.treatment_excluded = minus(flow.treatment_all, flow.treatment_final);
  flow.treated_exclusion_reasons = {{"untutored attempt of a treated student", untutored_attempts},
                                    {"no subsequent attempt without help", no_outcome},
                                    {"problem absent from control sample", treated_off_problem}};
  flow.control_excluded = minus(flow.control_analysis, control_final_nt.counts());

  Tally control_final = control_final_nt;
  for (const auto& r : washout) control_final.add_row(r);
  flow.control_final = control_final.counts();
  if (policy.control_mode == ControlMode::Washout) flow.washout_admitted = washout_tally.counts();

  Tally total = treat_final;
  for (const auto& r : control) total.add_row(r);
  for (const auto& r : washout) total.add_row(r);
  flow.total = total.counts();

  // Canonical order within the control arm.
  control.insert(control.end(), washout.begin(), washout.end());
  std::sort(control.begin(), control.end(), [](const AnalyticRow& a, const AnalyticRow& b) {
    return std::tie(a.student_id, a.anchor_seq) < std::tie(b.student_id, b.anchor_seq);
  });

  out.treated = link_placebo(std::move(treated), log, policy.placebo_offset);
  out.control = link_placebo(std::move(control), log, policy.placebo_offset);
  out.holdout = log.subset(holdout_ids);
  return out;
}

AnalyticRows link_placebo(AnalyticRows rows, const EventLog& log, std::size_t offset) {
  const auto off = static_cast<std::int64_t>(offset);
  for (auto& row : rows) {
    row.y_placebo.reset();
    if (offset >= 1 && row.anchor_seq >= off) {
      row.y_placebo = log.at(row.student_id, row.anchor_seq - off).correct;
    }
  }
  return rows;
}

AnalyticRows combine(const SampleSet& samples) {
  AnalyticRows rows = samples.treated;
  rows.insert(rows.end(), samples.control.begin(), samples.control.end());
  return rows;
}

// ---------------------------------------------------------------------------
// flow report

std::vector<std::string> SampleFlowReport::check_conservation() const {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  expect(original.students == treatment_all.students + control_all.students,
         "original students != treatment usage + control usage");
  expect(original.attempts == treatment_all.attempts + control_all.attempts,
         "original attempts != treatment usage + control usage");
  const FlowCounts treat_sum = {treatment_final.students + treatment_excluded.students,
                                treatment_final.attempts + treatment_excluded.attempts,
                                treatment_final.problems + treatment_excluded.problems};
  expect(treat_sum == treatment_all, "treated final + excluded != all treatment usage");
  expect(control_all.students == holdout.students + control_analysis.students,
         "control usage students != holdout + control analysis");
  expect(control_all.attempts == holdout.attempts + control_analysis.attempts,
         "control usage attempts != holdout + control analysis");
  FlowCounts control_kept = control_final;
  if (washout_admitted) {
    control_kept.students -= washout_admitted->students;
    control_kept.attempts -= washout_admitted->attempts;
    // Problem sets overlap between never-treated and washout rows; skip that column.
    control_kept.problems = control_analysis.problems - control_excluded.problems;
  }
  const FlowCounts control_sum = {control_kept.students + control_excluded.students,
                                  control_kept.attempts + control_excluded.attempts,
                                  control_kept.problems + control_excluded.problems};
  expect(control_sum == control_analysis, "control final + excluded != control analysis");
  if (washout_admitted) {
    // washout students usually also have treated rows, and the total counts each student once
    expect(total.students <= treatment_final.students + control_final.students &&
               total.students + washout_admitted->students >= treatment_final.students + control_final.students,
           "total students outside treated + control less washout overlap");
  } else {
    expect(total.students == treatment_final.students + control_final.students,
           "total students != treated + control");
  }
  expect(total.attempts == treatment_final.attempts + control_final.attempts,
         "total attempts != treated + control");
  return failures;
}

namespace {

std::string with_commas(std::size_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  const int n = static_cast<int>(digits.size());
  for (int i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::string md_row(const std::string& label, const FlowCounts& c, bool parenthesize = false) {
  auto cell = [&](std::size_t v) {
    return parenthesize ? "(" + with_commas(v) + ")" : with_commas(v);
  };
  return "| " + label + " | " + cell(c.students) + " | " + cell(c.attempts) + " | " +
         cell(c.problems) + " |\n";
}

nlohmann::json counts_json(const FlowCounts& c) {
  return {{"students", c.students}, {"attempts", c.attempts}, {"problems", c.problems}};
}

}  // namespace

std::string SampleFlowReport::to_markdown() const {
  std::ostringstream md;
  md << "| | Students | Problem Attempts | Unique Problems |\n";
  md << "|---|---:|---:|---:|\n";
  md << md_row("**Original Usage Data**", original);
  md << "| **Treatment Sample** | | | |\n";
  md << md_row("All Treatment Usage", treatment_all);
  md << md_row("&nbsp;&nbsp;*Excluded*", treatment_excluded, true);
  md << md_row("**Final Analytic Treated**", treatment_final);
  md << "| **Control Sample** | | | |\n";
  md << md_row("All Control Usage", control_all);
  md << md_row("DKT Training Holdout", holdout);
  md << md_row("Control Analysis", control_analysis);
  md << md_row("&nbsp;&nbsp;*Excluded*", control_excluded, true);
  if (washout_admitted) md << md_row("Washout Controls Admitted", *washout_admitted);
  md << md_row("**Final Analytic Control**", control_final);
  md << md_row("**Total Analytic Sample**", total);
  return md.str();
}

nlohmann::json SampleFlowReport::to_json() const {
  nlohmann::json j;
  j["original"] = counts_json(original);
  j["treatment_all"] = counts_json(treatment_all);
  j["treatment_excluded"] = counts_json(treatment_excluded);
  j["treatment_final"] = counts_json(treatment_final);
  j["control_all"] = counts_json(control_all);
  j["holdout"] = counts_json(holdout);
  j["control_analysis"] = counts_json(control_analysis);
  j["control_excluded"] = counts_json(control_excluded);
  j["control_final"] = counts_json(control_final);
  if (washout_admitted) j["washout_admitted"] = counts_json(*washout_admitted);
  j["total"] = counts_json(total);
  j["treated_exclusion_reasons"] = treated_exclusion_reasons;
  j["conservation_failures"] = check_conservation();
  return j;
}

}  // namespace tfx
