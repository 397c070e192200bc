// Serial reference kernels against their OpenMP counterparts.
//
//   ./build/bench_kernels --benchmark_filter=gemm
//   OMP_NUM_THREADS=4 ./build/bench_kernels

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "atlab/kernels.hpp"

namespace k = atlab::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

using Gemm = void (*)(std::span<const double>, std::span<const double>, std::span<double>,
                      std::size_t, std::size_t, std::size_t, bool);

template <Gemm F>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    F(a, b, c, n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}

// Attention-shaped softmax: rows = frames, cols = tokens.
template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 64;
  const auto x = filled(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::softmax_rows(x, y, rows, cols);
    else k::serial::softmax_rows(x, y, rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_normalize(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 256;
  const auto x = filled(rows * cols, 4);
  std::vector<double> xhat(rows * cols), inv(rows);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::normalize_rows(x, xhat, inv, rows, cols, 1e-5);
    else k::serial::normalize_rows(x, xhat, inv, rows, cols, 1e-5);
    benchmark::DoNotOptimize(xhat.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm>)->Name("gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::parallel::gemm>)->Name("gemm/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_softmax<false>)->Name("softmax/serial")->Range(64, 4096);
BENCHMARK(BM_softmax<true>)->Name("softmax/parallel")->Range(64, 4096);
BENCHMARK(BM_normalize<false>)->Name("normalize/serial")->Range(64, 4096);
BENCHMARK(BM_normalize<true>)->Name("normalize/parallel")->Range(64, 4096);

BENCHMARK_MAIN();
