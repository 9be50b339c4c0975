// Parallel kernels against the serial reference loops, plus the dense and
// support-only convolution paths on a masked layer.
#include <benchmark/benchmark.h>

#include <vector>

#include "psconv/kernels.hpp"
#include "psconv/mask.hpp"
#include "psconv/reference.hpp"
#include "psconv/rng.hpp"

namespace {

using psconv::kernels::ConvGeometry;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  psconv::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return v;
}

ConvGeometry layer(std::size_t ch, std::size_t side) {
  return {ch, side, side, ch, side, side, 3, 1, 1};
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    psconv::kernels::gemm(n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(128)->Arg(256);

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    psconv::reference::gemm(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(128)->Arg(256);

// range(0): channels, range(1): kss
struct ConvFixture {
  ConvGeometry g;
  std::vector<float> x, w, y;
  psconv::KernelSupportMask mask;

  explicit ConvFixture(const benchmark::State& state)
      : g(layer(static_cast<std::size_t>(state.range(0)), 16)),
        x(random_vec(g.in_ch * g.in_h * g.in_w, 3)),
        w(random_vec(g.out_ch * g.patch_size(), 4)),
        y(g.out_ch * g.out_pixels()),
        mask(psconv::generate_mask(3, static_cast<std::size_t>(state.range(1)), g.in_ch, g.out_ch, 5)) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!mask.bits()[i]) w[i] = 0.0f;
    }
  }
};

void BM_ConvDense(benchmark::State& state) {
  ConvFixture f(state);
  for (auto _ : state) {
    psconv::kernels::conv2d_forward(f.x.data(), f.w.data(), 1, f.g, f.y.data());
    benchmark::DoNotOptimize(f.y.data());
  }
}
BENCHMARK(BM_ConvDense)->Args({32, 9})->Args({32, 4})->Args({64, 4})->Args({64, 2});

void BM_ConvSupport(benchmark::State& state) {
  ConvFixture f(state);
  for (auto _ : state) {
    psconv::kernels::conv2d_forward_support(f.x.data(), f.w.data(), f.mask.bits(), 1, f.g, f.y.data());
    benchmark::DoNotOptimize(f.y.data());
  }
}
BENCHMARK(BM_ConvSupport)->Args({32, 9})->Args({32, 4})->Args({64, 4})->Args({64, 2});

void BM_ConvReference(benchmark::State& state) {
  ConvFixture f(state);
  for (auto _ : state) {
    psconv::reference::conv2d_forward(f.x.data(), f.w.data(), 1, f.g, f.y.data());
    benchmark::DoNotOptimize(f.y.data());
  }
}
BENCHMARK(BM_ConvReference)->Args({32, 9})->Args({64, 4});

}  // namespace

BENCHMARK_MAIN();
