#include <benchmark/benchmark.h>

#include <vector>

#include "molmamba/kernels.hpp"
#include "molmamba/rng.hpp"

using namespace molmamba;

namespace {

std::vector<double> filled(std::size_t n, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, -1, 1, 1), b = filled(n * n, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm(n, n, n, a, false, b, false, c, false);
    else reference::gemm(n, n, n, a, false, b, false, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

struct ScanData {
  ScanDims dims;
  std::vector<double> u, delta, a, b, cm, y, states, gy, gu, gdelta, ga, gb, gc;
  explicit ScanData(std::size_t l, std::size_t ch, std::size_t n)
      : dims{l, ch, n},
        u(filled(l * ch, -1, 1, 3)),
        delta(filled(l * ch, 0.01, 0.5, 4)),
        a(filled(ch * n, -2, -0.1, 5)),
        b(filled(l * n, -1, 1, 6)),
        cm(filled(l * n, -1, 1, 7)),
        y(l * ch),
        states(l * ch * n),
        gy(filled(l * ch, -1, 1, 8)),
        gu(l * ch),
        gdelta(l * ch),
        ga(ch * n),
        gb(l * n),
        gc(l * n) {}
};

template <bool Parallel>
void BM_ScanForward(benchmark::State& state) {
  ScanData s(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 16);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::selective_scan_forward(s.dims, s.u, s.delta, s.a, s.b, s.cm, s.y, s.states);
    else reference::selective_scan_forward(s.dims, s.u, s.delta, s.a, s.b, s.cm, s.y, s.states);
    benchmark::DoNotOptimize(s.y.data());
  }
}

template <bool Parallel>
void BM_ScanBackward(benchmark::State& state) {
  ScanData s(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 16);
  reference::selective_scan_forward(s.dims, s.u, s.delta, s.a, s.b, s.cm, s.y, s.states);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::selective_scan_backward(s.dims, s.u, s.delta, s.a, s.b, s.cm, s.states, s.gy, s.gu, s.gdelta, s.ga,
                                       s.gb, s.gc);
    else
      reference::selective_scan_backward(s.dims, s.u, s.delta, s.a, s.b, s.cm, s.states, s.gy, s.gu, s.gdelta,
                                         s.ga, s.gb, s.gc);
    benchmark::DoNotOptimize(s.gu.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_ScanForward<false>)->Name("scan_forward/reference")->Args({64, 128})->Args({256, 256});
BENCHMARK(BM_ScanForward<true>)->Name("scan_forward/parallel")->Args({64, 128})->Args({256, 256});
BENCHMARK(BM_ScanBackward<false>)->Name("scan_backward/reference")->Args({64, 128})->Args({256, 256});
BENCHMARK(BM_ScanBackward<true>)->Name("scan_backward/parallel")->Args({64, 128})->Args({256, 256});
BENCHMARK_MAIN();
