// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <vector>

#include "emd/numerics/kernels.hpp"
#include "emd/numerics/rng.hpp"

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  emd::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <auto Gemm>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    Gemm(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <auto Softmax>
void bm_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), n = std::size_t{128};
  const auto x = random_values(rows * n, 3);
  std::vector<float> y(rows * n);
  for (auto _ : state) {
    Softmax(rows, n, x.data(), nullptr, y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto LayerNorm>
void bm_layer_norm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), n = std::size_t{64};
  const auto x = random_values(rows * n, 4);
  const std::vector<float> gamma(n, 1.0f), beta(n, 0.0f);
  std::vector<float> y(rows * n), xhat(rows * n), inv(rows);
  for (auto _ : state) {
    LayerNorm(rows, n, x.data(), gamma.data(), beta.data(), 1e-5f, y.data(), xhat.data(), inv.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(bm_gemm<emd::kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_gemm<emd::kernels::omp::gemm_nn>)->Name("gemm_nn/omp")->Arg(64)->Arg(256);
BENCHMARK(bm_gemm<emd::kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_gemm<emd::kernels::omp::gemm_tn>)->Name("gemm_tn/omp")->Arg(64)->Arg(256);
BENCHMARK(bm_softmax<emd::kernels::serial::softmax_rows>)->Name("softmax/serial")->Arg(4096);
BENCHMARK(bm_softmax<emd::kernels::omp::softmax_rows>)->Name("softmax/omp")->Arg(4096);
BENCHMARK(bm_layer_norm<emd::kernels::serial::layer_norm_rows>)->Name("layer_norm/serial")->Arg(8192);
BENCHMARK(bm_layer_norm<emd::kernels::omp::layer_norm_rows>)->Name("layer_norm/omp")->Arg(8192);

BENCHMARK_MAIN();
