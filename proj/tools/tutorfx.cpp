// tutorfx command-line driver: full run or one stage at a time.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tutorfx/config.hpp"
#include "tutorfx/error.hpp"
#include "tutorfx/parallel.hpp"
#include "tutorfx/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out;
  bool print_defaults = false;
  // per-command overrides
  std::string log;
  std::string sessions;
  std::string context;
  std::optional<std::size_t> n_trees;
  std::optional<std::size_t> dkt_epochs;
  std::optional<std::size_t> students;
  bool reuse_forests = false;
};

tfx::PipelineConfig load_config(const GlobalFlags& f) {
  tfx::PipelineConfig cfg = f.config.empty() ? tfx::PipelineConfig{} : tfx::PipelineConfig::load(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.log.empty()) cfg.log_path = f.log;
  if (!f.sessions.empty()) cfg.sessions_path = f.sessions;
  if (!f.context.empty()) cfg.context_path = f.context;
  if (f.n_trees) {
    cfg.nuisance_forest.n_trees = *f.n_trees;
    cfg.causal_forest.n_trees = *f.n_trees;
  }
  if (f.dkt_epochs) cfg.dkt.epochs = *f.dkt_epochs;
  if (f.students) cfg.simulate.n_students = *f.students;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous tutoring-effect estimation from learning-platform logs"};
  app.set_version_flag("--version", std::string(tfx::library_version()));
  GlobalFlags f;
  app.add_option("--config", f.config, "TOML config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "global seed (overrides config)");
  app.add_option("--threads", f.threads, "worker cap, 0 = all cores");
  app.add_option("--out", f.out, "output directory (overrides config)");
  app.add_flag("--print-defaults", f.print_defaults, "print the default config as TOML and exit");
  app.require_subcommand(0, 1);

  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--log", f.log, "event log (CSV or JSONL)");
    sub->add_option("--sessions", f.sessions, "session features CSV");
    sub->add_option("--context", f.context, "student context CSV");
  };
  auto* run = app.add_subcommand("run", "run every stage");
  add_data_flags(run);
  run->add_option("--n-trees", f.n_trees, "trees per forest");
  run->add_option("--dkt-epochs", f.dkt_epochs, "DKT training epochs");
  run->add_option("--students", f.students, "simulated students");
  auto* simulate = app.add_subcommand("simulate", "write a synthetic log with ground truth");
  simulate->add_option("--students", f.students, "simulated students");
  auto* prep = app.add_subcommand("prep", "build analytic samples and the flow table");
  add_data_flags(prep);
  auto* train = app.add_subcommand("train-dkt", "train knowledge tracing on the holdout students");
  train->add_option("--dkt-epochs", f.dkt_epochs, "DKT training epochs");
  auto* extract = app.add_subcommand("extract", "attach DKT features to analytic rows");
  add_data_flags(extract);
  auto* estimate = app.add_subcommand("estimate", "nuisance forests, causal forest and AIPW effects");
  add_data_flags(estimate);
  estimate->add_option("--n-trees", f.n_trees, "trees per forest");
  estimate->add_flag("--reuse-forests", f.reuse_forests, "load causal forests from models/ instead of training");
  auto* analyze = app.add_subcommand("analyze", "heterogeneity, overlap, sensitivity and the report");
  add_data_flags(analyze);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    tfx::set_max_threads(f.threads);
    const tfx::PipelineConfig cfg = load_config(f);
    if (f.print_defaults) {
      std::cout << (f.config.empty() ? tfx::PipelineConfig{}.to_toml() : cfg.to_toml());
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 2;
    }
    tfx::Pipeline p(cfg);
    if (*run) p.run();
    else if (*simulate) p.simulate();
    else if (*prep) p.prep();
    else if (*train) p.train_dkt();
    else if (*extract) p.extract();
    else if (*estimate) p.estimate(f.reuse_forests);
    else if (*analyze) p.analyze();
    std::cerr << "tutorfx: done, outputs in " << p.out().string() << "\n";
    return 0;
  } catch (const tfx::Error& e) {
    std::cerr << "tutorfx: " << e.what() << "\n";
    return tfx::exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "tutorfx: unexpected failure: " << e.what() << "\n";
    return 1;
  }
}
