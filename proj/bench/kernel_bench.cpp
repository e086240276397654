#include <benchmark/benchmark.h>

#include "spiralmlp/kernels.hpp"
#include "spiralmlp/offsets.hpp"
#include "spiralmlp/rng.hpp"
#include "spiralmlp/spiral_fc.hpp"

using namespace spiralmlp;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  CounterRng rng(seed);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

// Token-mixing shaped product: (H*W) x C times C x C.
template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const std::size_t side = state.range(0), c = state.range(1), m = side * side;
  const auto a = random_vec(m * c, 1), b = random_vec(c * c, 2);
  std::vector<float> out(m * c);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::omp::matmul(a.data(), b.data(), out.data(), m, c, c, false);
    else kernels::serial::matmul(a.data(), b.data(), out.data(), m, c, c, false);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(m * c * c));
  state.counters["threads"] = kernels::num_threads();
}

template <bool Parallel>
void BM_SpiralGather(benchmark::State& state) {
  const std::size_t side = state.range(0), c = state.range(1);
  const OffsetTable table = spiral_offsets({c, 3, 8, 1, Rounding::NearestInteger});
  const auto plan = make_gather_plan(offset_taps(table), side, side);
  const auto x = random_vec(side * side * c, 3);
  std::vector<float> out(x.size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::omp::gather(plan, x.data(), out.data());
    else kernels::serial::gather(plan, x.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetBytesProcessed(state.iterations() * std::int64_t(x.size() * sizeof(float)));
}

template <bool Parallel>
void BM_SpiralScatter(benchmark::State& state) {
  const std::size_t side = state.range(0), c = state.range(1);
  const OffsetTable table = spiral_offsets({c, 3, 8, 1, Rounding::NearestInteger});
  const auto plan = make_gather_plan(offset_taps(table), side, side);
  const auto g = random_vec(side * side * c, 4);
  std::vector<float> out(g.size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::omp::scatter_add(plan, g.data(), out.data());
    else kernels::serial::scatter_add(plan, g.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetBytesProcessed(state.iterations() * std::int64_t(g.size() * sizeof(float)));
}

}  // namespace

#define SIZES ->Args({56, 64})->Args({28, 128})->Args({14, 320})->Args({112, 64})

BENCHMARK(BM_Matmul<false>) SIZES;
BENCHMARK(BM_Matmul<true>) SIZES;
BENCHMARK(BM_SpiralGather<false>) SIZES;
BENCHMARK(BM_SpiralGather<true>) SIZES;
BENCHMARK(BM_SpiralScatter<false>) SIZES;
BENCHMARK(BM_SpiralScatter<true>) SIZES;

BENCHMARK_MAIN();
