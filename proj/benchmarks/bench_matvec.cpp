// Microbenchmarks for the decode-phase matvec paths: dense column sweep vs
// gather over the kept channels, plus the offline decomposition cost.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "rsparse/layer.hpp"
#include "rsparse/matrix.hpp"
#include "rsparse/rng.hpp"
#include "rsparse/scores.hpp"
#include "rsparse/svd.hpp"

namespace {

rsparse::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  rsparse::Rng rng(seed);
  rsparse::Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  rsparse::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void BM_GatherMatvec(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const double keep = static_cast<double>(state.range(1)) / 100.0;
  const auto w = rsparse::ColMajorMatrix::from_row_major(random_matrix(dim, dim, 7));
  const auto x = random_vector(dim, 11);
  const auto k = static_cast<std::size_t>(std::ceil(keep * static_cast<double>(dim)));
  const auto kept = rsparse::top_k_by_magnitude(x, k);
  for (auto _ : state) {
    auto y = rsparse::gather_matvec(w, x, kept);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(kept.size() * dim * sizeof(double)));
}

void BM_DenseMatvec(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto w = random_matrix(dim, dim, 7);
  const auto x = random_vector(dim, 11);
  for (auto _ : state) {
    auto y = rsparse::matvec(w, x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(dim * dim * sizeof(double)));
}

void BM_Decompose(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto w = random_matrix(dim, dim, 7);
  const auto sv = rsparse::svd(w);
  // flat scores: decomposition falls back to leading singular components
  rsparse::ScoreMatrix score{
      rsparse::Matrix(dim, dim, std::vector<double>(dim * dim, 1.0)), 1, "bench"};
  const rsparse::SparsityPlan plan{0.5, dim / 8};
  for (auto _ : state) {
    auto layer = rsparse::decompose_with_svd(w, plan, score, sv);
    benchmark::DoNotOptimize(layer.a_r.data());
  }
}

}  // namespace

BENCHMARK(BM_DenseMatvec)->Arg(1024)->Arg(2048)->Arg(4096)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GatherMatvec)
    ->Args({1024, 50})
    ->Args({2048, 50})
    ->Args({4096, 25})
    ->Args({4096, 50})
    ->Args({4096, 100})
    ->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Decompose)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
