#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "tutorfx/forest.hpp"

namespace {

struct Data {
  Eigen::MatrixXd X;
  std::vector<double> y, z;
  std::vector<std::string> clusters;
};

// Five continuous features plus one binary; 20 rows per cluster.
Data make_data(std::size_t n) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.5);
  Data d;
  d.X.resize(static_cast<Eigen::Index>(n), 6);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < 5; ++j) d.X(r, j) = nd(rng);
    d.X(r, 5) = coin(rng) ? 1.0 : 0.0;
    const double zi = coin(rng) ? 0.5 : -0.5;
    d.z.push_back(zi);
    d.y.push_back(d.X(r, 0) + 0.5 * d.X(r, 5) + zi * (d.X(r, 1) > 0 ? 1.0 : 0.0) + nd(rng));
    d.clusters.push_back("c" + std::to_string(i / 20));
  }
  return d;
}

tfx::ForestConfig config(std::size_t trees, std::size_t bins) {
  tfx::ForestConfig c;
  c.n_trees = trees;
  c.max_bins = bins;
  return c;
}

void BM_RegressionForest(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  const auto cfg = config(20, static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    auto f = tfx::train_regression_forest(d.X, d.y, d.clusters, cfg);
    benchmark::DoNotOptimize(f);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 20);
}
BENCHMARK(BM_RegressionForest)
    ->Args({2000, 256})
    ->Args({20000, 256})
    ->Args({20000, 65536})
    ->Unit(benchmark::kMillisecond);

void BM_CausalForest(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  const auto cfg = config(20, 256);
  for (auto _ : state) {
    auto f = tfx::train_causal_forest(d.X, d.y, d.z, d.clusters, cfg);
    benchmark::DoNotOptimize(f);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 20);
}
BENCHMARK(BM_CausalForest)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_PredictCate(benchmark::State& state) {
  const auto d = make_data(20000);
  const auto f = tfx::train_causal_forest(d.X, d.y, d.z, d.clusters, config(50, 256));
  for (auto _ : state) {
    auto p = tfx::predict_cate(f, d.X, d.clusters);
    benchmark::DoNotOptimize(p);
  }
}
BENCHMARK(BM_PredictCate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
