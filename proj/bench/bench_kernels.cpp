// Serial reference kernels against the blocked OpenMP path.
#include <benchmark/benchmark.h>

#include "saek/kernels.hpp"
#include "saek/reference.hpp"
#include "saek/rng.hpp"

namespace {

using saek::Tensor;

Tensor random(saek::Shape shape, std::uint64_t seed) {
  saek::SplitMix64 rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_gemm_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random({n, n}, 1), b = random({n, n}, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    saek::reference::gemm<float>(saek::kernels::Trans::no, saek::kernels::Trans::no, n, n, n, a.data().data(), n,
                                 b.data().data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void BM_gemm_blocked(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random({n, n}, 1), b = random({n, n}, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    saek::kernels::gemm<float>(saek::kernels::Trans::no, saek::kernels::Trans::no, n, n, n, a.data().data(), n,
                               b.data().data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void BM_conv_reference(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random({4, c, 28, 28}, 3), w = random({c, c, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(saek::reference::conv2d_forward<float>(x, w, nullptr, 1, 1));
}

void BM_conv_blocked(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random({4, c, 28, 28}, 3), w = random({c, c, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(saek::kernels::conv2d_forward<float>(x, w, nullptr, 1, 1));
}

}  // namespace

BENCHMARK(BM_gemm_reference)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_blocked)->Arg(64)->Arg(256);
BENCHMARK(BM_conv_reference)->Arg(16)->Arg(64);
BENCHMARK(BM_conv_blocked)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
