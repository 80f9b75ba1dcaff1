#include <map>

#include <benchmark/benchmark.h>

#include <caviar/estimators.hpp>
#include <caviar/simgen.hpp>

namespace {

const caviar::Simulation& sim(std::size_t n) {
  static const auto geo = caviar::generate_geography(caviar::kDefaultSimLevels, 7);
  static std::map<std::size_t, caviar::Simulation> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, caviar::simulate(geo, caviar::sim1_config(n, 7))).first;
  }
  return it->second;
}

void BM_Simulate(benchmark::State& state) {
  const auto geo = caviar::generate_geography(caviar::kDefaultSimLevels, 7);
  const auto cfg = caviar::sim1_config(static_cast<std::size_t>(state.range(0)), 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::simulate(geo, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Simulate)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_AbsorbedOls(benchmark::State& state) {
  const auto& data = sim(static_cast<std::size_t>(state.range(0))).data;
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::fit_ols_absorbed(data));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AbsorbedOls)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_MergedRare(benchmark::State& state) {
  const auto& data = sim(100000).data;
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::fit_merged_rare(data, 3));
  }
}
BENCHMARK(BM_MergedRare)->Unit(benchmark::kMillisecond);

void BM_LassoPath(benchmark::State& state) {
  const auto& data = sim(static_cast<std::size_t>(state.range(0))).data;
  caviar::LassoOptions opt;
  opt.num_lambda = 50;
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::lasso_path(data, opt));
  }
}
BENCHMARK(BM_LassoPath)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_Caviar(benchmark::State& state) {
  const auto geo = caviar::generate_geography(caviar::kDefaultSimLevels, 7);
  const auto& data = sim(100000).data;
  caviar::EmbeddingMatrix emb;
  emb.coords.resize(static_cast<Eigen::Index>(geo.size()), 2);
  emb.coords.col(0) = geo.attributes.column("latitude");
  emb.coords.col(1) = geo.attributes.column("longitude");
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::fit_caviar(data, emb));
  }
}
BENCHMARK(BM_Caviar)->Unit(benchmark::kMillisecond);

}  // namespace
