#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lcfb/kernels.hpp"
#include "lcfb/lcgan.hpp"
#include "lcfb/vae.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

template <auto Kernel>
void matmul_bench(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void BM_MatmulSerial(benchmark::State& state) { matmul_bench<lcfb::kernels::matmul_serial>(state); }
void BM_MatmulParallel(benchmark::State& state) { matmul_bench<lcfb::kernels::matmul_parallel>(state); }
BENCHMARK(BM_MatmulSerial)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_MatmulParallel)->RangeMultiplier(2)->Range(32, 256);

void sample_bench(benchmark::State& state, lcfb::Backend backend) {
  lcfb::VaeConfig cfg;
  cfg.class_label = "loop";
  const auto model = lcfb::init_vae(cfg, 1);
  const auto g = lcfb::init_generator(cfg.latent_dim, 2);
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto out = lcfb::sample_constrained(&g, model, 0.25, 3, n, backend);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

void BM_SampleSerial(benchmark::State& state) { sample_bench(state, lcfb::Backend::Serial); }
void BM_SampleParallel(benchmark::State& state) { sample_bench(state, lcfb::Backend::Parallel); }
BENCHMARK(BM_SampleSerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SampleParallel)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
