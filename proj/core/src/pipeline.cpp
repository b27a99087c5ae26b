#include "tutorfx/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tutorfx/csv.hpp"
#include "tutorfx/digest.hpp"
#include "tutorfx/error.hpp"
#include "tutorfx/ingest.hpp"
#include "tutorfx/report.hpp"
#include "tutorfx/serialize.hpp"

#ifndef TUTORFX_VERSION
#define TUTORFX_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace tfx {

std::string_view library_version() { return TUTORFX_VERSION; }

CausalFitOptions fit_options(const PipelineConfig& c) {
  CausalFitOptions o;
  o.nuisance_forest = c.nuisance_forest;
  o.causal_forest = c.causal_forest;
  o.clamp_lo = c.analysis.clamp_lo;
  o.clamp_hi = c.analysis.clamp_hi;
  o.tune_nuisance = c.analysis.tune_nuisance;
  return o;
}

namespace {

Outcome parse_outcome(const std::string& s) {
  if (s == "immediate") return Outcome::Immediate;
  if (s == "near_transfer") return Outcome::NearTransfer;
  if (s == "placebo") return Outcome::Placebo;
  throw Error(ErrorCode::ConfigError, "unknown outcome '" + s + "'");
}

std::string strip_code(const Error& e) {
  const std::string what = e.what();
  const auto at = what.find(": ");
  return at == std::string::npos ? what : what.substr(at + 2);
}

nlohmann::json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

// Per-unit estimation output, one line per analytic unit of an outcome.
struct UnitEstimate {
  std::string unit_id;
  std::string student_id;
  int z = 0;
  double y = 0.0;
  double m_hat = 0.0;
  double e_hat = 0.0;
  double tau_hat = 0.0;
  std::size_t n_trees = 0;
  double score = 0.0;
};

void write_units(const fs::path& p, const AnalyticRows& rows, const EffectRun& run) {
  const auto scores = aipw_scores(run.fit.y, run.fit.z, run.fit.nuisance, run.fit.cate.values);
  std::string out = "unit_id,student_id,z,y,m_hat,e_hat,tau_hat,n_trees,score\n";
  for (std::size_t k = 0; k < run.selected.size(); ++k) {
    const auto& r = rows[run.selected[k]];
    out += fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g},{},{:.17g}\n", r.unit_id, r.student_id, r.z, run.fit.y[k],
                       run.fit.nuisance.m_hat[k], run.fit.nuisance.e_hat[k], run.fit.cate.values[k],
                       run.fit.cate.n_trees_used[k], scores[k]);
  }
  write_text(p, out);
}

std::vector<UnitEstimate> read_units(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "missing " + p.string());
  csv::Reader reader(in);
  auto header = reader.next();
  std::vector<UnitEstimate> out;
  while (auto rec = reader.next()) {
    if (rec->size() == 1 && (*rec)[0].empty()) continue;
    if (rec->size() != 9) throw Error(ErrorCode::MalformedRecord, p.string() + ": expected 9 columns");
    const auto& f = *rec;
    UnitEstimate u;
    u.unit_id = f[0];
    u.student_id = f[1];
    u.z = std::stoi(f[2]);
    u.y = std::stod(f[3]);
    u.m_hat = std::stod(f[4]);
    u.e_hat = std::stod(f[5]);
    u.tau_hat = std::stod(f[6]);
    u.n_trees = std::stoul(f[7]);
    u.score = std::stod(f[8]);
    out.push_back(u);
  }
  return out;
}

EffectEstimate effect_from_json(const nlohmann::json& j) {
  EffectEstimate e;
  const auto est = j.at("estimand").get<std::string>();
  e.estimand = est == "ATT" ? Estimand::ATT : est == "PLACEBO_ATE" ? Estimand::PlaceboATE : Estimand::ATE;
  e.outcome = j.at("outcome").get<std::string>();
  e.variant = j.at("variant").get<std::string>();
  e.estimate = j.at("estimate_pp").get<double>();
  e.ci_low = j.at("ci_low_pp").get<double>();
  e.ci_high = j.at("ci_high_pp").get<double>();
  e.std_error = j.at("std_error_pp").get<double>();
  e.n_units = j.at("n_units").get<std::size_t>();
  e.n_clusters = j.at("n_clusters").get<std::size_t>();
  e.p_value = j.at("p_value").get<double>();
  if (!j.at("p_value_adjusted").is_null()) e.p_value_adjusted = j.at("p_value_adjusted").get<double>();
  return e;
}

std::string digest_of(const fs::path& p) { return sha256_file(p); }

void collect_digests(const fs::path& root, const fs::path& target, std::map<std::string, std::string>& out) {
  if (!fs::exists(target)) return;
  if (fs::is_regular_file(target)) {
    out[fs::relative(target, root).generic_string()] = digest_of(target);
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(target)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[fs::relative(f, root).generic_string()] = digest_of(f);
}

}  // namespace

Pipeline::Pipeline(const PipelineConfig& config) : Pipeline(config, config.out_dir) {}

Pipeline::Pipeline(const PipelineConfig& config, fs::path out_dir)
    : raw_(config), cfg_(config.resolved()), out_(std::move(out_dir)) {
  cfg_.validate();
}

template <typename F>
void Pipeline::stage(const std::string& name, const std::vector<std::string>& outputs, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path marker = path("failed/" + name + ".json");
  auto record_failure = [&](const std::string& code, const std::string& message) {
    write_json(marker, {{"stage", name}, {"error", code}, {"message", message}});
  };
  try {
    body();
  } catch (const Error& e) {
    record_failure(std::string(to_string(e.code())), strip_code(e));
    throw Error(e.code(), "stage '" + name + "': " + strip_code(e));
  } catch (const std::exception& e) {
    record_failure("IoError", e.what());
    throw Error(ErrorCode::IoError, "stage '" + name + "': " + e.what());
  }
  if (fs::exists(marker)) fs::remove(marker);
  if (fs::exists(path("failed")) && fs::is_empty(path("failed"))) fs::remove(path("failed"));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, std::string> digests;
  for (const auto& o : outputs) collect_digests(out_, path(o), digests);
  nlohmann::json manifest = fs::exists(path("manifest.json")) ? read_json(path("manifest.json")) : nlohmann::json::object();
  manifest["tool"] = "tutorfx";
  manifest["version"] = std::string(library_version());
  manifest["eigen"] = fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
  manifest["config"] = raw_.to_json();
  manifest["stages"][name] = {{"wall_seconds", seconds}, {"outputs", digests}};
  write_json(path("manifest.json"), manifest);
}

EventLog Pipeline::input_log() const {
  if (cfg_.log_path) {
    LogFiles files{*cfg_.log_path, std::nullopt, std::nullopt};
    if (cfg_.sessions_path) files.sessions = *cfg_.sessions_path;
    if (cfg_.context_path) files.context = *cfg_.context_path;
    if (!fs::exists(files.events)) {
      throw Error(ErrorCode::MissingUpstreamArtifact, "event log not found: " + files.events.string());
    }
    return load_log(files);
  }
  if (!fs::exists(path("data/events.csv"))) {
    throw Error(ErrorCode::MissingUpstreamArtifact,
                "no paths.log configured and " + path("data/events.csv").string() + " does not exist (run simulate first)");
  }
  return load_log({path("data/events.csv"), path("data/sessions.csv"), path("data/context.csv")});
}

void Pipeline::simulate() {
  stage("simulate", {"data"}, [&] {
    const Simulation sim = simulate_population(cfg_.simulate);
    save_log(path("data"), sim.log);
    std::ostringstream truth;
    sim.truth.write_jsonl(truth);
    write_text(path("data/truth.jsonl"), truth.str());
    nlohmann::json summary;
    summary["config"] = cfg_.simulate.to_json();
    summary["n_events"] = sim.log.size();
    summary["n_students"] = sim.log.students().size();
    summary["oracle_ate_all_units_pp"] = 100.0 * oracle_ate(sim.truth, [](const UnitTruth&) { return true; });
    summary["naive_difference_pp"] = 100.0 * naive_log_difference(sim.log);
    write_json(path("data/simulation.json"), summary);
  });
}

void Pipeline::prep() {
  stage("prep", {"samples"}, [&] {
    const EventLog log = input_log();
    write_json(path("samples/validation.json"), validate_log(log).to_json());
    const SampleSet samples = build_samples(log, cfg_.sample);
    write_rows(path("samples/rows.jsonl"), combine(samples));
    std::ostringstream holdout;
    emit_events(holdout, samples.holdout, LogFormat::Csv);
    write_text(path("samples/holdout_events.csv"), holdout.str());
    write_json(path("samples/flow.json"), samples.flow.to_json());
    write_text(path("samples/flow.md"), samples.flow.to_markdown());
    const auto& variants = cfg_.analysis.variants;
    if (std::find(variants.begin(), variants.end(), "washout_controls") != variants.end()) {
      SamplePolicy washout = cfg_.sample;
      washout.control_mode = ControlMode::Washout;
      const SampleSet ws = build_samples(log, washout);
      write_rows(path("samples/washout_rows.jsonl"), combine(ws));
      write_json(path("samples/washout_flow.json"), ws.flow.to_json());
    }
  });
}

void Pipeline::train_dkt() {
  stage("train-dkt", {"models/dkt.json"}, [&] {
    const EventLog holdout = load_log({path("samples/holdout_events.csv"), std::nullopt, std::nullopt});
    const DktModel model = tfx::train_dkt(holdout, cfg_.dkt);
    fs::create_directories(path("models"));
    model.save(path("models/dkt.json"));
  });
}

void Pipeline::extract() {
  stage("extract", {"features"}, [&] {
    const DktModel model = DktModel::load(path("models/dkt.json"));
    const EventLog log = input_log();
    ExtractDiagnostics diag;
    const AnalyticRows rows = extract_features(model, read_rows(path("samples/rows.jsonl")), log, &diag);
    write_rows(path("features/rows.jsonl"), rows);
    if (fs::exists(path("samples/washout_rows.jsonl"))) {
      write_rows(path("features/washout_rows.jsonl"),
                 extract_features(model, read_rows(path("samples/washout_rows.jsonl")), log, &diag));
    }
    // held-out AUC on the control students (disjoint from the DKT training holdout)
    std::set<std::string> control_students;
    for (const auto& r : rows) {
      if (r.z == 0 && !r.washout_admitted) control_students.insert(r.student_id);
    }
    nlohmann::json d;
    d["unknown_items"] = diag.unknown_items;
    d["unknown_skills"] = diag.unknown_skills;
    d["control_auc"] = control_students.empty()
                           ? nlohmann::json(nullptr)
                           : nlohmann::json(evaluate_auc(model, log.subset({control_students.begin(), control_students.end()})));
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& r : model.curve()) curve.push_back(r.to_json());
    d["training_curve"] = curve;
    write_json(path("features/diagnostics.json"), d);
  });
}

void Pipeline::estimate(bool reuse_forests) {
  stage("estimate", {"estimates", "models"}, [&] {
    const AnalyticRows rows = read_rows(path("features/rows.jsonl"));
    const CausalFitOptions base = fit_options(cfg_);
    std::vector<EffectEstimate> effects;
    for (const auto& name : cfg_.analysis.outcomes) {
      CausalFitOptions opt = base;
      const fs::path ckpt = path("models/causal_forest_" + name + ".json");
      if (reuse_forests) opt.causal_override = Forest::load(ckpt);
      const EffectRun run = run_effect(rows, parse_outcome(name), opt);
      write_units(path("estimates/units_" + name + ".csv"), rows, run);
      if (!reuse_forests) run.fit.causal_forest.save(ckpt);
      effects.push_back(run.fit.ate);
      effects.push_back(run.fit.att);
    }
    if (cfg_.analysis.placebo) {
      const EffectRun run = run_placebo(rows, base, cfg_.analysis.placebo_min_coverage);
      write_units(path("estimates/units_placebo.csv"), rows, run);
      effects.push_back(run.fit.ate);
    }
    const Outcome primary = parse_outcome(cfg_.analysis.outcomes.front());
    for (const auto& v : cfg_.analysis.variants) {
      if (v == "external_covariates") {
        const EventLog log = input_log();
        const DktModel model = DktModel::load(path("models/dkt.json"));
        const VariantInputs in{log, model, cfg_.sample, rows};
        effects.push_back(run_variant(Variant::ExternalCovariates, in, primary, base).fit.ate);
      } else if (v == "washout_controls") {
        const AnalyticRows washout = read_rows(path("features/washout_rows.jsonl"));
        EffectRun run = run_effect(washout, primary, base);
        run.fit.ate.variant = to_string(Variant::WashoutControls);
        effects.push_back(run.fit.ate);
      }
    }
    // family: the configured primary outcomes
    const std::size_t family = cfg_.analysis.outcomes.size();
    for (auto& e : effects) e.p_value_adjusted = std::min(1.0, static_cast<double>(family) * e.p_value);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : effects) j.push_back(e.to_json());
    write_json(path("estimates/effects.json"), {{"bonferroni_family", family}, {"effects", j}});
  });
}

void Pipeline::analyze() {
  stage("analyze", {"report"}, [&] {
    const AnalyticRows rows = read_rows(path("features/rows.jsonl"));
    std::map<std::string, const AnalyticRow*> by_unit;
    for (const auto& r : rows) by_unit[r.unit_id] = &r;
    const nlohmann::json effects_json = read_json(path("estimates/effects.json"));
    std::vector<EffectEstimate> effects;
    for (const auto& e : effects_json.at("effects")) effects.push_back(effect_from_json(e));
    const std::size_t family = effects_json.at("bonferroni_family").get<std::size_t>();
    const EventLog log = input_log();
    const auto* context = log.context().empty() ? nullptr : &log.context();
    const auto method = cfg_.analysis.moderator_method == "random_intercept_ml" ? ModeratorMethod::RandomInterceptMl
                                                                                 : ModeratorMethod::ClusterRobustOls;

    nlohmann::json report;
    std::string md = "# Tutoring effect report\n\n## Sample construction\n\n" + read_text(path("samples/flow.md"));
    report["sample_flow"] = read_json(path("samples/flow.json"));
    const nlohmann::json dkt = read_json(path("features/diagnostics.json"));
    report["dkt"] = dkt;
    md += "\n## Knowledge tracing\n\n";
    if (!dkt.at("control_auc").is_null()) {
      md += fmt::format("Held-out AUC on control students: {}.", fmt_num(dkt.at("control_auc").get<double>(), 4));
    }
    if (!dkt.at("training_curve").empty()) {
      const auto& last = dkt.at("training_curve").back();
      md += fmt::format(" Final training epoch {}: loss {}, AUC {}.", last.at("epoch").get<std::size_t>(),
                        fmt_num(last.at("loss").get<double>(), 4), fmt_num(last.at("auc").get<double>(), 4));
      // parameters kept from the epoch with the best validation AUC, when validation ran
      const nlohmann::json* best = nullptr;
      for (const auto& r : dkt.at("training_curve")) {
        if (r.contains("val_auc") && !r.at("val_auc").is_null() &&
            (!best || r.at("val_auc").get<double>() > best->at("val_auc").get<double>())) {
          best = &r;
        }
      }
      if (best) {
        md += fmt::format(" Kept epoch {} (validation AUC {}).", best->at("epoch").get<std::size_t>(),
                          fmt_num(best->at("val_auc").get<double>(), 4));
      }
    }
    md += fmt::format(" Unknown items at extraction: {}; unknown skills: {}.\n",
                      dkt.at("unknown_items").get<std::size_t>(), dkt.at("unknown_skills").get<std::size_t>());

    std::map<std::string, std::map<std::string, double>> tau_by_outcome;
    nlohmann::json cate_j, het_j, overlap_j, sens_j, splits_j;
    std::string het_md, overlap_md, sens_md, cate_md;
    for (const auto& name : cfg_.analysis.outcomes) {
      const auto units = read_units(path("estimates/units_" + name + ".csv"));
      std::vector<double> tau_pp, tau, e_hat, scores, y, z;
      std::vector<std::string> clusters;
      std::vector<std::size_t> selected;
      std::map<std::string, std::size_t> row_index;
      for (std::size_t i = 0; i < rows.size(); ++i) row_index[rows[i].unit_id] = i;
      for (const auto& u : units) {
        tau_pp.push_back(100.0 * u.tau_hat);
        tau.push_back(u.tau_hat);
        e_hat.push_back(u.e_hat);
        scores.push_back(u.score);
        y.push_back(u.y);
        z.push_back(u.z);
        clusters.push_back(u.student_id);
        tau_by_outcome[name][u.unit_id] = u.tau_hat;
        auto it = row_index.find(u.unit_id);
        if (it == row_index.end()) throw Error(ErrorCode::MissingUpstreamArtifact, "unit " + u.unit_id + " missing from rows");
        selected.push_back(it->second);
      }

      const CateSummary cs = summarize_cates(tau_pp, cfg_.analysis.cate_histogram_bins);
      cate_j[name] = cs.to_json();
      write_text(path("report/cate_" + name + "_histogram.csv"), cs.to_csv());
      cate_md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", name, cs.n, fmt_num(cs.mean, 2), fmt_num(cs.sd, 2),
                             fmt_num(cs.min, 2), fmt_num(cs.max, 2));

      // moderator models, one per moderator and per interaction
      auto moderator_values = [&](const std::string& m, std::vector<std::size_t>& keep) {
        std::vector<double> v;
        for (std::size_t k = 0; k < selected.size(); ++k) {
          const auto& r = rows[selected[k]];
          std::optional<double> x;
          if (m == "p_current") x = r.features->p_current;
          else if (m == "p_next") x = r.features->p_next;
          else if (m == "cum_accuracy") x = r.features->cum_accuracy;
          else if (m == "pretest") {
            if (context) {
              auto it = context->find(r.student_id);
              if (it != context->end()) x = it->second.pretest_score;
            }
          } else if (r.session) {
            if (m == "messages_total") x = static_cast<double>(r.session->messages_total);
            else if (m == "duration_minutes") x = r.session->duration_minutes;
            else if (m == "student_word_share") x = r.session->student_word_share;
            else if (m == "prior_session_count") x = static_cast<double>(r.session->prior_session_count);
            else throw Error(ErrorCode::ConfigError, "unknown moderator '" + m + "'");
          }
          if (x) {
            keep.push_back(k);
            v.push_back(*x);
          }
        }
        return v;
      };
      nlohmann::json mods = nlohmann::json::array();
      het_md += fmt::format("\n### {}\n\n| Model | Term | Beta (pp per SD) | SE | p | n |\n|---|---|---:|---:|---:|---:|\n", name);
      auto add_fit = [&](const std::string& label, const ModeratorFit& fit) {
        mods.push_back({{"model", label}, {"fit", fit.to_json()}});
        for (std::size_t t = 1; t < fit.names.size(); ++t) {
          het_md += fmt::format("| {} | {} | {}{} | {} | {} | {} |\n", label, fit.names[t], fmt_num(fit.beta[t], 3),
                                significance_stars(fit.p_values[t]), fmt_num(fit.std_errors[t], 3),
                                fmt_num(fit.p_values[t], 4), fit.n);
        }
      };
      for (const auto& m : cfg_.analysis.moderators) {
        std::vector<std::size_t> keep;
        const auto v = moderator_values(m, keep);
        if (keep.size() < 3) continue;
        const auto zv = zscore(v);
        Eigen::MatrixXd M(static_cast<Eigen::Index>(keep.size()), 1);
        std::vector<double> t;
        std::vector<std::string> cl;
        for (std::size_t k = 0; k < keep.size(); ++k) {
          M(static_cast<Eigen::Index>(k), 0) = zv[k];
          t.push_back(tau_pp[keep[k]]);
          cl.push_back(clusters[keep[k]]);
        }
        add_fit(m, fit_moderator_model(t, M, {m}, cl, method));
      }
      for (const auto& spec : cfg_.analysis.interactions) {
        const auto star = spec.find('*');
        if (star == std::string::npos) throw Error(ErrorCode::ConfigError, "interaction '" + spec + "' must be a*b");
        const std::string a = spec.substr(0, star), b = spec.substr(star + 1);
        std::vector<std::size_t> ka, kb;
        const auto va = moderator_values(a, ka);
        const auto vb = moderator_values(b, kb);
        std::map<std::size_t, double> mb;
        for (std::size_t k = 0; k < kb.size(); ++k) mb[kb[k]] = vb[k];
        std::vector<double> xa, xb, t;
        std::vector<std::string> cl;
        for (std::size_t k = 0; k < ka.size(); ++k) {
          auto it = mb.find(ka[k]);
          if (it == mb.end()) continue;
          xa.push_back(va[k]);
          xb.push_back(it->second);
          t.push_back(tau_pp[ka[k]]);
          cl.push_back(clusters[ka[k]]);
        }
        if (t.size() < 4) continue;
        const auto za = zscore(xa), zb = zscore(xb);
        Eigen::MatrixXd M(static_cast<Eigen::Index>(t.size()), 3);
        for (std::size_t k = 0; k < t.size(); ++k) {
          const auto i = static_cast<Eigen::Index>(k);
          M(i, 0) = za[k];
          M(i, 1) = zb[k];
          M(i, 2) = za[k] * zb[k];
        }
        add_fit(spec, fit_moderator_model(t, M, {a, b, a + ":" + b}, cl, method));
      }

      // session characteristics, treated units only
      nlohmann::json quartiles = nlohmann::json::array();
      for (const auto& m : cfg_.analysis.session_moderators) {
        std::vector<std::size_t> keep;
        const auto v = moderator_values(m, keep);
        if (keep.size() < 8) continue;
        std::vector<double> t;
        std::vector<std::string> cl;
        for (auto k : keep) {
          t.push_back(tau[k]);
          cl.push_back(clusters[k]);
        }
        try {
          const auto table = quartile_contrasts(t, v, cl, m);
          quartiles.push_back(table.to_json());
          write_text(path("report/quartiles_" + name + "_" + m + ".csv"), table.to_csv());
          het_md += "\n" + table.to_markdown();
        } catch (const Error& e) {
          if (e.code() != ErrorCode::DegenerateQuartiles) throw;
          quartiles.push_back({{"variable", m}, {"error", strip_code(e)}});
          het_md += "\n**" + m + "**: " + strip_code(e) + "\n";
        }
      }
      het_j[name] = {{"moderators", mods}, {"quartiles", quartiles}};

      // overlap and trimming
      const auto ov = overlap_report(e_hat, cfg_.analysis.trim_lo, cfg_.analysis.trim_hi);
      overlap_j[name] = ov.to_json();
      overlap_md += "\n### " + name + "\n\n" + ov.to_markdown();
      const auto trimmed = trim_by_propensity(e_hat, cfg_.analysis.trim_lo, cfg_.analysis.trim_hi);
      std::vector<double> kept_scores;
      std::vector<std::string> kept_clusters;
      for (auto k : trimmed.kept) {
        kept_scores.push_back(scores[k]);
        kept_clusters.push_back(clusters[k]);
      }
      EffectEstimate te = summarize_scores(kept_scores, kept_clusters, Estimand::ATE);
      te.outcome = name;
      te.variant = "trimmed";
      te.p_value_adjusted = std::min(1.0, static_cast<double>(family) * te.p_value);
      effects.push_back(te);

      // omitted-variable sensitivity
      const Design design = design_matrix(rows, selected, context);
      const auto sens = sensitivity_analysis(design.X, design.names, y, z, cfg_.analysis.rv_benchmarks, cfg_.analysis.rv_q);
      sens_j[name] = sens.to_json();
      sens_md += fmt::format("\n### {}\n\nTreatment t = {} on {} degrees of freedom; RV(q={}) = {}, RV at alpha 0.05 = {}.\n",
                             name, fmt_num(sens.t_statistic, 3), fmt_num(sens.dof, 0), fmt_num(sens.q, 2),
                             fmt_num(sens.rv_q, 4), fmt_num(sens.rv_q_alpha, 4));
      if (!sens.benchmarks.empty()) {
        sens_md += "\n| Benchmark | Partial R2 (treatment) | Partial R2 (outcome) | RV / strongest |\n|---|---:|---:|---:|\n";
        for (const auto& b : sens.benchmarks) {
          sens_md += fmt::format("| {} | {} | {} | {} |\n", b.name, fmt_num(b.r2_with_treatment, 5),
                                 fmt_num(b.r2_with_outcome, 5), fmt_num(b.ratio, 2));
        }
      }

      // split counts of the stored causal forest
      const Forest forest = Forest::load(path("models/causal_forest_" + name + ".json"));
      const Design plain = design_matrix(rows, std::span<const std::size_t>(selected.data(), 1));
      std::map<std::string, std::size_t> counts;
      for (const auto& t : forest.trees) {
        for (const auto& n : t.nodes) {
          if (!n.is_leaf()) ++counts[plain.names.at(static_cast<std::size_t>(n.feature))];
        }
      }
      splits_j[name] = counts;
    }

    // CATE agreement across outcomes
    nlohmann::json corr = nullptr;
    if (tau_by_outcome.size() >= 2) {
      const auto& a = tau_by_outcome.at(cfg_.analysis.outcomes[0]);
      const auto& b = tau_by_outcome.at(cfg_.analysis.outcomes[1]);
      std::vector<double> va, vb;
      for (const auto& [id, t] : a) {
        auto it = b.find(id);
        if (it != b.end()) {
          va.push_back(t);
          vb.push_back(it->second);
        }
      }
      if (va.size() > 2) corr = cate_correlation(va, vb);
    }

    report["effects"] = nlohmann::json::array();
    for (const auto& e : effects) report["effects"].push_back(e.to_json());
    report["cate"] = cate_j;
    report["cate_correlation"] = corr;
    report["heterogeneity"] = het_j;
    report["overlap"] = overlap_j;
    report["sensitivity"] = sens_j;
    report["forest_split_counts"] = splits_j;

    md += "\n## Effect estimates\n\n" + effects_markdown(effects);
    md += "\n## CATE distribution\n\n| Outcome | n | Mean (pp) | SD | Min | Max |\n|---|---:|---:|---:|---:|---:|\n" + cate_md;
    if (!corr.is_null()) md += "\nCorrelation of unit-level CATEs across outcomes: " + fmt_num(corr.get<double>(), 3) + ".\n";
    md += "\n## Heterogeneity\n" + het_md;
    md += "\n## Overlap\n" + overlap_md;
    md += "\n## Sensitivity to unobserved confounding\n" + sens_md;

    // simulation oracle, when the run simulated its own data
    if (!cfg_.log_path && fs::exists(path("data/truth.jsonl"))) {
      std::ifstream in(path("data/truth.jsonl"));
      std::map<std::string, std::pair<double, std::optional<double>>> truth;
      std::string line;
      while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        std::optional<double> ts;
        if (j.contains("tau_skill")) ts = j.at("tau_skill").get<double>();
        truth[j.at("unit_id").get<std::string>()] = {j.at("tau").get<double>(), ts};
      }
      nlohmann::json oracle;
      md += "\n## Simulation oracle\n\n| Outcome | Oracle ATE (pp) | Estimate (pp) | 95% CI |\n|---|---:|---:|---|\n";
      for (const auto& name : cfg_.analysis.outcomes) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [id, t] : tau_by_outcome.at(name)) {
          auto it = truth.find(id);
          if (it == truth.end()) continue;
          if (name == "immediate") sum += it->second.first;
          else if (it->second.second) sum += *it->second.second;
          else continue;
          ++n;
        }
        if (n == 0) continue;
        const double oracle_pp = 100.0 * sum / static_cast<double>(n);
        oracle[name] = oracle_pp;
        for (const auto& e : effects) {
          if (e.outcome == name && e.estimand == Estimand::ATE && e.variant == "primary") {
            md += fmt::format("| {} | {} | {} | [{}, {}] |\n", name, fmt_num(oracle_pp, 2), fmt_num(e.estimate, 2),
                              fmt_num(e.ci_low, 2), fmt_num(e.ci_high, 2));
          }
        }
      }
      report["oracle_pp"] = oracle;
    }

    const std::vector<std::string> notes = {
        "Quartile contrasts use Bonferroni correction over all pairwise comparisons in place of Tukey HSD.",
        "Moderator regressions treat estimated CATEs as outcomes and do not propagate their estimation uncertainty.",
        "Standard errors cluster by student."};
    report["notes"] = notes;
    md += "\n## Notes\n\n";
    for (const auto& n : notes) md += "- " + n + "\n";

    write_json(path("report/report.json"), report);
    write_text(path("report/report.md"), md);
    write_text(path("report/effects.csv"), effects_csv(effects));
  });
}

void Pipeline::run() {
  if (!cfg_.log_path) simulate();
  prep();
  train_dkt();
  extract();
  estimate();
  analyze();
}

std::map<std::string, std::string> Pipeline::digests() const {
  std::map<std::string, std::string> out;
  if (!fs::exists(out_)) return out;
  for (const auto& e : fs::directory_iterator(out_)) {
    const auto name = e.path().filename().string();
    if (name == "manifest.json" || name == "failed") continue;
    collect_digests(out_, e.path(), out);
  }
  return out;
}

}  // namespace tfx
