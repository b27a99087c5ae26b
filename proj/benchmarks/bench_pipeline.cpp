#include <benchmark/benchmark.h>

#include "tutorfx/sampler.hpp"
#include "tutorfx/simulator.hpp"

namespace {

void BM_Simulate(benchmark::State& state) {
  tfx::SimConfig sc;
  sc.n_students = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto sim = tfx::simulate_population(sc);
    benchmark::DoNotOptimize(sim);
  }
}
BENCHMARK(BM_Simulate)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_BuildSamples(benchmark::State& state) {
  tfx::SimConfig sc;
  sc.n_students = 2000;
  const auto sim = tfx::simulate_population(sc);
  for (auto _ : state) {
    auto s = tfx::build_samples(sim.log, tfx::SamplePolicy{});
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_BuildSamples)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
