#include <benchmark/benchmark.h>

#include "tutorfx/dkt.hpp"
#include "tutorfx/sampler.hpp"
#include "tutorfx/simulator.hpp"

namespace {

const tfx::EventLog& holdout() {
  static const tfx::EventLog log = [] {
    tfx::SimConfig sc;
    sc.n_students = 600;
    sc.seed = 3;
    const auto sim = tfx::simulate_population(sc);
    return tfx::build_samples(sim.log, tfx::SamplePolicy{}).holdout;
  }();
  return log;
}

void BM_TrainOneEpoch(benchmark::State& state) {
  tfx::DktConfig cfg;
  cfg.epochs = 1;
  cfg.hidden_dim = static_cast<std::size_t>(state.range(0));
  cfg.validation_fraction = 0.0;
  const auto& log = holdout();
  for (auto _ : state) {
    auto m = tfx::train_dkt(log, cfg);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(BM_TrainOneEpoch)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  tfx::DktConfig cfg;
  cfg.epochs = 1;
  cfg.validation_fraction = 0.0;
  const auto& log = holdout();
  const auto model = tfx::train_dkt(log, cfg);
  std::vector<tfx::DktSequence> batch;
  for (std::size_t i = 0; i < log.students().size() && batch.size() < cfg.batch_size; ++i) {
    batch.push_back(model.encode(log.student_events(i)));
  }
  Eigen::VectorXd grad;
  std::size_t attempts = 0;
  for (const auto& s : batch) attempts += s.labels.size();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.loss_and_gradient(batch, grad));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(attempts));
}
BENCHMARK(BM_LossAndGradient)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
