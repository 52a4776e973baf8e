// Reference loops vs the OpenMP im2col/GEMM kernels on the model's own layer
// shapes (batch 32). Run with --benchmark_filter to pick layers.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "subvae/kernels.hpp"

namespace k = subvae::kernels;
using subvae::Index;

namespace {

constexpr Index kBatch = 32;

const k::Conv2dGeometry kEncoder[] = {
    {kBatch, 9, 48, 48, 32, 3, 3, 2, 1},
    {kBatch, 32, 24, 24, 64, 3, 3, 2, 1},
    {kBatch, 64, 12, 12, 128, 3, 3, 2, 1},
};

const k::ConvTranspose2dGeometry kDecoder[] = {
    {kBatch, 128, 6, 6, 64, 4, 4, 2, 1},
    {kBatch, 64, 12, 12, 32, 4, 4, 2, 1},
    {kBatch, 32, 24, 24, 9, 4, 4, 2, 1},
};

std::vector<float> random_values(Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

Index conv_flops(const k::Conv2dGeometry& g) {
  return 2 * g.batch * g.out_channels * g.out_h() * g.out_w() * g.in_channels * g.kernel_h * g.kernel_w;
}

enum class Pass { forward, backward_input, backward_weight };

template <bool Parallel, Pass P>
void BM_Conv(benchmark::State& state) {
  const auto& g = kEncoder[state.range(0)];
  k::set_num_threads(static_cast<int>(state.range(1)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = random_values(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w, 2);
  const auto dy = random_values(g.batch * g.out_channels * g.out_h() * g.out_w(), 3);
  std::vector<float> out(std::max({x.size(), w.size(), dy.size()}));
  for (auto _ : state) {
    if constexpr (P == Pass::forward) {
      if constexpr (Parallel) k::parallel::conv2d_forward(g, x.data(), w.data(), out.data());
      else k::reference::conv2d_forward(g, x.data(), w.data(), out.data());
    } else if constexpr (P == Pass::backward_input) {
      if constexpr (Parallel) k::parallel::conv2d_backward_input(g, dy.data(), w.data(), out.data());
      else k::reference::conv2d_backward_input(g, dy.data(), w.data(), out.data());
    } else {
      if constexpr (Parallel) k::parallel::conv2d_backward_weight(g, x.data(), dy.data(), out.data());
      else k::reference::conv2d_backward_weight(g, x.data(), dy.data(), out.data());
    }
    benchmark::DoNotOptimize(out.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOPS"] = benchmark::Counter(static_cast<double>(conv_flops(g)) * 1e-9,
                                                benchmark::Counter::kIsIterationInvariantRate);
  k::set_num_threads(1);
}

template <bool Parallel, Pass P>
void BM_ConvTranspose(benchmark::State& state) {
  const auto& g = kDecoder[state.range(0)];
  k::set_num_threads(static_cast<int>(state.range(1)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = random_values(g.in_channels * g.out_channels * g.kernel_h * g.kernel_w, 2);
  const auto dy = random_values(g.batch * g.out_channels * g.out_h() * g.out_w(), 3);
  std::vector<float> out(std::max({x.size(), w.size(), dy.size()}));
  for (auto _ : state) {
    if constexpr (P == Pass::forward) {
      if constexpr (Parallel) k::parallel::conv_transpose2d_forward(g, x.data(), w.data(), out.data());
      else k::reference::conv_transpose2d_forward(g, x.data(), w.data(), out.data());
    } else if constexpr (P == Pass::backward_input) {
      if constexpr (Parallel) k::parallel::conv_transpose2d_backward_input(g, dy.data(), w.data(), out.data());
      else k::reference::conv_transpose2d_backward_input(g, dy.data(), w.data(), out.data());
    } else {
      if constexpr (Parallel) k::parallel::conv_transpose2d_backward_weight(g, x.data(), dy.data(), out.data());
      else k::reference::conv_transpose2d_backward_weight(g, x.data(), dy.data(), out.data());
    }
    benchmark::DoNotOptimize(out.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOPS"] = benchmark::Counter(static_cast<double>(conv_flops(g.adjoint())) * 1e-9,
                                                benchmark::Counter::kIsIterationInvariantRate);
  k::set_num_threads(1);
}

void BM_Gemm(benchmark::State& state) {
  const Index m = state.range(0), n = state.range(1), kk = state.range(2);
  k::set_num_threads(static_cast<int>(state.range(3)));
  const auto a = random_values(m * kk, 1);
  const auto b = random_values(kk * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m * n));
  for (auto _ : state) {
    k::parallel::gemm(false, false, m, n, kk, 1.f, a.data(), kk, b.data(), n, 0.f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * static_cast<double>(m * n * kk) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
  k::set_num_threads(1);
}

void layer_args(benchmark::internal::Benchmark* b) {
  b->ArgNames({"layer", "threads"});
  for (int layer = 0; layer < 3; ++layer) {
    for (int threads : {1, 2, 4}) b->Args({layer, threads});
  }
  b->Unit(benchmark::kMillisecond)->UseRealTime();
}

void reference_args(benchmark::internal::Benchmark* b) {
  b->ArgNames({"layer", "threads"});
  for (int layer = 0; layer < 3; ++layer) b->Args({layer, 1});
  b->Unit(benchmark::kMillisecond)->UseRealTime();
}

}  // namespace

BENCHMARK(BM_Conv<false, Pass::forward>)->Name("conv2d_forward/reference")->Apply(reference_args);
BENCHMARK(BM_Conv<true, Pass::forward>)->Name("conv2d_forward/parallel")->Apply(layer_args);
BENCHMARK(BM_Conv<false, Pass::backward_input>)->Name("conv2d_backward_input/reference")->Apply(reference_args);
BENCHMARK(BM_Conv<true, Pass::backward_input>)->Name("conv2d_backward_input/parallel")->Apply(layer_args);
BENCHMARK(BM_Conv<false, Pass::backward_weight>)->Name("conv2d_backward_weight/reference")->Apply(reference_args);
BENCHMARK(BM_Conv<true, Pass::backward_weight>)->Name("conv2d_backward_weight/parallel")->Apply(layer_args);

BENCHMARK(BM_ConvTranspose<false, Pass::forward>)->Name("conv_transpose2d_forward/reference")->Apply(reference_args);
BENCHMARK(BM_ConvTranspose<true, Pass::forward>)->Name("conv_transpose2d_forward/parallel")->Apply(layer_args);
BENCHMARK(BM_ConvTranspose<false, Pass::backward_input>)
    ->Name("conv_transpose2d_backward_input/reference")
    ->Apply(reference_args);
BENCHMARK(BM_ConvTranspose<true, Pass::backward_input>)
    ->Name("conv_transpose2d_backward_input/parallel")
    ->Apply(layer_args);
BENCHMARK(BM_ConvTranspose<false, Pass::backward_weight>)
    ->Name("conv_transpose2d_backward_weight/reference")
    ->Apply(reference_args);
BENCHMARK(BM_ConvTranspose<true, Pass::backward_weight>)
    ->Name("conv_transpose2d_backward_weight/parallel")
    ->Apply(layer_args);

// Encoder heads and decoder fc at batch 32: 32×4608 · 4608×512.
BENCHMARK(BM_Gemm)
    ->ArgNames({"m", "n", "k", "threads"})
    ->Args({32, 512, 4608, 1})
    ->Args({32, 512, 4608, 2})
    ->Args({32, 4608, 512, 1})
    ->Args({32, 4608, 512, 2})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

BENCHMARK_MAIN();
