// Serial reference versus OpenMP kernels at the shapes seen in training:
// batch 32, feature width 128, 64-dim observations and 128-point models.

#include "mast/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace k = mast::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <auto Fn>
void bm_matmul(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), kk = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : st) {
    Fn(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(m * kk * n));
}

// Weight gradient: W^T-shaped accumulation over the batch.
template <auto Fn>
void bm_matmul_tn(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), kk = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  const auto a = random_vec(kk * m, 3), b = random_vec(kk * n, 4);
  std::vector<double> c(m * n, 0.0);
  for (auto _ : st) {
    Fn(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(m * kk * n));
}

template <auto Fn>
void bm_cosine(benchmark::State& st) {
  const auto b = static_cast<std::size_t>(st.range(0)), c = static_cast<std::size_t>(st.range(1));
  const auto f = random_vec(b * c, 5);
  std::vector<double> g(b * b);
  for (auto _ : st) {
    Fn(f, g, b, c);
    benchmark::DoNotOptimize(g.data());
  }
}

template <auto Fn>
void bm_closest(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto p = random_vec(3 * n, 6), q = random_vec(3 * n, 7);
  for (auto _ : st) benchmark::DoNotOptimize(Fn(p, q, n, n));
}

}  // namespace

BENCHMARK(bm_matmul<k::serial::matmul>)->Name("matmul/serial")->Args({32, 64, 128})->Args({32, 128, 128})->Args({256, 128, 128});
BENCHMARK(bm_matmul<k::omp::matmul>)->Name("matmul/omp")->Args({32, 64, 128})->Args({32, 128, 128})->Args({256, 128, 128});
BENCHMARK(bm_matmul_tn<k::serial::matmul_tn_acc>)->Name("matmul_tn_acc/serial")->Args({128, 32, 128});
BENCHMARK(bm_matmul_tn<k::omp::matmul_tn_acc>)->Name("matmul_tn_acc/omp")->Args({128, 32, 128});
BENCHMARK(bm_cosine<k::serial::cosine_graph>)->Name("cosine_graph/serial")->Args({32, 128})->Args({256, 128});
BENCHMARK(bm_cosine<k::omp::cosine_graph>)->Name("cosine_graph/omp")->Args({32, 128})->Args({256, 128});
BENCHMARK(bm_closest<k::serial::mean_closest_distance>)->Name("mean_closest_distance/serial")->Arg(128)->Arg(1024);
BENCHMARK(bm_closest<k::omp::mean_closest_distance>)->Name("mean_closest_distance/omp")->Arg(128)->Arg(1024);

BENCHMARK_MAIN();
