// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary threads.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hgsg/kernels.hpp"

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      hgsg::kernels::gemm(a, b, c, n, n, n);
    else
      hgsg::kernels::serial::gemm(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// Region features: N regions x C channels x 7x7 pixels.
template <bool Parallel>
void BM_Conv1x1(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0)), ch = static_cast<std::size_t>(state.range(1));
  const std::size_t pixels = 49;
  const auto x = filled(batch * ch * pixels, 3), w = filled(ch * ch, 4), bias = filled(ch, 5);
  std::vector<double> out(batch * ch * pixels);
  for (auto _ : state) {
    if constexpr (Parallel)
      hgsg::kernels::conv1x1_forward(x, w, bias, out, batch, ch, ch, pixels);
    else
      hgsg::kernels::serial::conv1x1_forward(x, w, bias, out, batch, ch, ch, pixels);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_NearestCentroid(benchmark::State& state) {
  const auto count = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 30, dim = 300;
  const auto pts = filled(count * dim, 6), cents = filled(k * dim, 7);
  std::vector<std::size_t> assign(count);
  std::vector<double> d2(count);
  for (auto _ : state) {
    if constexpr (Parallel)
      hgsg::kernels::nearest_centroid(pts, cents, assign, d2, count, k, dim);
    else
      hgsg::kernels::serial::nearest_centroid(pts, cents, assign, d2, count, k, dim);
    benchmark::DoNotOptimize(assign.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv1x1<false>)->Name("conv1x1/serial")->Args({16, 64})->Args({64, 256});
BENCHMARK(BM_Conv1x1<true>)->Name("conv1x1/omp")->Args({16, 64})->Args({64, 256});
BENCHMARK(BM_NearestCentroid<false>)->Name("nearest_centroid/serial")->Arg(275)->Arg(4000);
BENCHMARK(BM_NearestCentroid<true>)->Name("nearest_centroid/omp")->Arg(275)->Arg(4000);

BENCHMARK_MAIN();
