#include <random>

#include <benchmark/benchmark.h>

#include <caviar/embed.hpp>

namespace {

Eigen::MatrixXd features(Eigen::Index rows, Eigen::Index cols) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  return Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return normal(rng); });
}

void BM_Pca(benchmark::State& state) {
  const auto f = features(25000, state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(caviar::pca_reduce(f, 8));
  }
}
BENCHMARK(BM_Pca)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_MockEncode(benchmark::State& state) {
  caviar::MockEncoder enc(256);
  std::vector<std::string> texts;
  for (int i = 0; i < 1000; ++i) texts.push_back("zip " + std::to_string(10000 + i));
  for (auto _ : state) {
    caviar::EmbeddingCache cache;
    benchmark::DoNotOptimize(caviar::encode_texts(texts, enc, cache));
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_MockEncode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
