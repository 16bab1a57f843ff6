// Serial reference vs OpenMP kernels.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "upil/kernels.hpp"
#include "upil/losses.hpp"
#include "upil/partitioner.hpp"

using namespace upil;

namespace {

Tensor2 random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2 t(r, c);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

std::vector<int> labels(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor2 A = random_tensor(n, 64, 1), B = random_tensor(64, 64, 2);
  Tensor2 C(n, 64);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul(A, B, C);
    else kernels::serial::matmul(A, B, C);
    benchmark::DoNotOptimize(C.values().data());
  }
}

template <bool Parallel>
void BM_supcon_anchor_terms(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ScaledSimilarity sim = scaled_similarity(random_tensor(n, 16, 3), kDefaultTau);
  const auto y = labels(n);
  const std::vector<double> w(n, 1.0);
  std::vector<double> mass(n), logden(n), poslog(n), loss(n);
  std::vector<std::uint8_t> active(n);
  const kernels::SupConAnchorTerms out{mass, logden, poslog, loss, active};
  for (auto _ : state) {
    if constexpr (Parallel) kernels::supcon_anchor_terms(sim.scaled, y, w, out);
    else kernels::serial::supcon_anchor_terms(sim.scaled, y, w, out);
    benchmark::DoNotOptimize(loss.data());
  }
}

template <bool Parallel>
void BM_oracle(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const Tensor2 Z = random_tensor(m, 8, 4);
  const auto y = labels(m);
  for (auto _ : state) {
    OracleResult r = Parallel ? brute_force_oracle(Z, y, 2, kDefaultTau, kDefaultLambda)
                              : serial::brute_force_oracle(Z, y, 2, kDefaultTau, kDefaultLambda);
    benchmark::DoNotOptimize(r.score);
  }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(256)->Arg(2048);
BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->Arg(256)->Arg(2048);
BENCHMARK(BM_supcon_anchor_terms<false>)->Name("supcon_anchor_terms/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_supcon_anchor_terms<true>)->Name("supcon_anchor_terms/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_oracle<false>)->Name("oracle/serial")->Arg(12)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_oracle<true>)->Name("oracle/omp")->Arg(12)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
