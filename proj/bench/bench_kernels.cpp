// Microbenchmarks comparing the OpenMP kernels against the serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "dlf/kernels.hpp"
#include "dlf/sparse_ops.hpp"

using namespace dlf;

namespace {

Tensor rand_hwc(int h, int w, int c, unsigned seed) {
  std::mt19937_64 rng(seed);
  Tensor t = Tensor::hwc(h, w, c);
  fill_uniform(t, rng, -1, 1);
  return t;
}

}  // namespace

static void BM_conv2d_omp(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor x = rand_hwc(n, n, 32, 1), w = Tensor::kkio(3, 32, 32), b = Tensor::vec(32);
  std::mt19937_64 rng(2);
  fill_uniform(w, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  Tensor out;
  for (auto _ : state) {
    kernels::conv2d_fwd(x, w, b, 1, 1, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_conv2d_omp)->Arg(32)->Arg(64)->Arg(128);

static void BM_conv2d_serial(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor x = rand_hwc(n, n, 32, 1), w = Tensor::kkio(3, 32, 32), b = Tensor::vec(32);
  std::mt19937_64 rng(2);
  fill_uniform(w, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  Tensor out;
  for (auto _ : state) {
    ref::conv2d_fwd(x, w, b, 1, 1, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_conv2d_serial)->Arg(32)->Arg(64)->Arg(128);

static void BM_cost_volume_omp(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor a = rand_hwc(n, n, 32, 3), b = rand_hwc(n, n, 32, 4);
  Tensor out;
  for (auto _ : state) {
    kernels::cost_volume_fwd(a, b, 4, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_cost_volume_omp)->Arg(32)->Arg(64);

static void BM_cost_volume_serial(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor a = rand_hwc(n, n, 32, 3), b = rand_hwc(n, n, 32, 4);
  Tensor out;
  for (auto _ : state) {
    ref::cost_volume_fwd(a, b, 4, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_cost_volume_serial)->Arg(32)->Arg(64);

static void BM_warp_omp(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor f = rand_hwc(n, n, 32, 5), flow = rand_hwc(n, n, 2, 6);
  Tensor out;
  for (auto _ : state) {
    kernels::warp_fwd(f, flow, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_warp_omp)->Arg(64)->Arg(256);

static void BM_warp_serial(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor f = rand_hwc(n, n, 32, 5), flow = rand_hwc(n, n, 2, 6);
  Tensor out;
  for (auto _ : state) {
    ref::warp_fwd(f, flow, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_warp_serial)->Arg(64)->Arg(256);

static void BM_conf_conv_omp(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor f = rand_hwc(n, n, 16, 7), c = rand_hwc(n, n, 1, 8);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (c[i] + 1.0);
  Tensor wf = Tensor::kkio(3, 16, 16), wc = Tensor::hw(3, 3), b = Tensor::vec(16);
  std::mt19937_64 rng(9);
  fill_uniform(wf, rng, -1, 1);
  fill_uniform(wc, rng, 0.1, 1);
  fill_uniform(b, rng, -1, 1);
  Tensor fo, co;
  for (auto _ : state) {
    kernels::conf_conv_fwd(f, c, wf, wc, b, 1, fo, co);
    benchmark::DoNotOptimize(fo);
  }
}
BENCHMARK(BM_conf_conv_omp)->Arg(64)->Arg(128);

static void BM_conf_conv_serial(benchmark::State& state) {
  const int n = int(state.range(0));
  Tensor f = rand_hwc(n, n, 16, 7), c = rand_hwc(n, n, 1, 8);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (c[i] + 1.0);
  Tensor wf = Tensor::kkio(3, 16, 16), wc = Tensor::hw(3, 3), b = Tensor::vec(16);
  std::mt19937_64 rng(9);
  fill_uniform(wf, rng, -1, 1);
  fill_uniform(wc, rng, 0.1, 1);
  fill_uniform(b, rng, -1, 1);
  Tensor fo, co;
  for (auto _ : state) {
    ref::conf_conv_fwd(f, c, wf, wc, b, 1, fo, co);
    benchmark::DoNotOptimize(fo);
  }
}
BENCHMARK(BM_conf_conv_serial)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
