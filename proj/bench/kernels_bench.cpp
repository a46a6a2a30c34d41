// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "artoveq/kernels.hpp"

namespace k = artoveq::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::matmul(a.data(), b.data(), c.data(), n, n, n);
    } else {
      k::serial::matmul(a.data(), b.data(), c.data(), n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_AssignNearest(benchmark::State& state) {
  const std::size_t points = 4096, dim = 2;
  const auto count = static_cast<std::size_t>(state.range(0));
  const auto p = noise(points * dim, 3), cb = noise(count * dim, 4);
  std::vector<std::int32_t> out(points);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::assign_nearest(p.data(), points, dim, dim, cb.data(), count, out.data(), 1);
    } else {
      k::serial::assign_nearest(p.data(), points, dim, dim, cb.data(), count, out.data(), 1);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(points * count));
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_AssignNearest<false>)->Arg(16)->Arg(256);
BENCHMARK(BM_AssignNearest<true>)->Arg(16)->Arg(256);

BENCHMARK_MAIN();
