#include "molmamba/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace molmamba {

namespace {

constexpr std::size_t kParallelWork = 1u << 14;

// Row i of C = op(A)[i,:] * op(B), summing over p in ascending order.
inline void gemm_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                     bool trans_a, std::span<const double> b, bool trans_b, double* crow, bool accumulate) {
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  if (!trans_b) {
    // dot products first, then one add into C, so rounding matches a plain triple loop
    thread_local std::vector<double> row;
    row.assign(n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = trans_a ? a[p * m + i] : a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* bcol = b.data() + j * k;
      double s = 0.0;
      if (trans_a) {
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * bcol[p];
      } else {
        const double* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * bcol[p];
      }
      crow[j] += s;
    }
  }
}

void scan_channel_forward(ScanDims d, std::size_t c, std::span<const double> u, std::span<const double> delta,
                          std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                          std::span<double> y, std::span<double> states) {
  const std::size_t L = d.length, C = d.channels, N = d.state;
  std::vector<double> h(N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    const double dt = delta[t * C + c];
    const double x = u[t * C + c];
    double acc = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      h[s] = std::exp(dt * a[c * N + s]) * h[s] + dt * b[t * N + s] * x;
      acc += cm[t * N + s] * h[s];
      states[(t * C + c) * N + s] = h[s];
    }
    y[t * C + c] = acc;
  }
}

// Per-channel reverse sweep. gb/gc contributions are written to channel-local
// buffers (layout [t][s]) so that the cross-channel reduction can run in a
// fixed order afterwards.
void scan_channel_backward(ScanDims d, std::size_t c, std::span<const double> u, std::span<const double> delta,
                           std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                           std::span<const double> states, std::span<const double> gy, std::span<double> gu,
                           std::span<double> gdelta, std::span<double> ga, double* gb_local, double* gc_local) {
  const std::size_t L = d.length, C = d.channels, N = d.state;
  std::vector<double> carry(N, 0.0);
  for (std::size_t s = 0; s < N; ++s) ga[c * N + s] = 0.0;
  for (std::size_t t = L; t-- > 0;) {
    const double dt = delta[t * C + c];
    const double x = u[t * C + c];
    const double g = gy[t * C + c];
    double gdt = 0.0, gx = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      const double h = states[(t * C + c) * N + s];
      const double hprev = t > 0 ? states[((t - 1) * C + c) * N + s] : 0.0;
      gc_local[t * N + s] = g * h;
      const double dh = carry[s] + g * cm[t * N + s];
      const double as = a[c * N + s];
      const double abar = std::exp(dt * as);
      const double gabar = dh * hprev;
      gdt += gabar * abar * as + dh * b[t * N + s] * x;
      ga[c * N + s] += gabar * abar * dt;
      gb_local[t * N + s] = dh * dt * x;
      gx += dh * dt * b[t * N + s];
      carry[s] = dh * abar;
    }
    gu[t * C + c] = gx;
    gdelta[t * C + c] = gdt;
  }
}

void reduce_channel_buffers(ScanDims d, const std::vector<double>& gb_all, const std::vector<double>& gc_all,
                            std::span<double> gb, std::span<double> gc) {
  const std::size_t L = d.length, C = d.channels, N = d.state;
  std::fill(gb.begin(), gb.end(), 0.0);
  std::fill(gc.begin(), gc.end(), 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double* pb = gb_all.data() + c * L * N;
    const double* pc = gc_all.data() + c * L * N;
    for (std::size_t i = 0; i < L * N; ++i) {
      gb[i] += pb[i];
      gc[i] += pc[i];
    }
  }
}

}  // namespace

namespace kernels {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, bool trans_a,
          std::span<const double> b, bool trans_b, std::span<double> c, bool accumulate) {
  const bool par = m > 1 && m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(i, m, n, k, a, trans_a, b, trans_b, c.data() + i * n, accumulate);
  }
}

void selective_scan_forward(ScanDims d, std::span<const double> u, std::span<const double> delta,
                            std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                            std::span<double> y, std::span<double> states) {
  const bool par = d.channels > 1 && d.length * d.channels * d.state >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t c = 0; c < d.channels; ++c) scan_channel_forward(d, c, u, delta, a, b, cm, y, states);
}

void selective_scan_backward(ScanDims d, std::span<const double> u, std::span<const double> delta,
                             std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                             std::span<const double> states, std::span<const double> gy, std::span<double> gu,
                             std::span<double> gdelta, std::span<double> ga, std::span<double> gb,
                             std::span<double> gc) {
  const std::size_t LN = d.length * d.state;
  std::vector<double> gb_all(d.channels * LN), gc_all(d.channels * LN);
  const bool par = d.channels > 1 && d.length * d.channels * d.state >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t c = 0; c < d.channels; ++c) {
    scan_channel_backward(d, c, u, delta, a, b, cm, states, gy, gu, gdelta, ga, gb_all.data() + c * LN,
                          gc_all.data() + c * LN);
  }
  reduce_channel_buffers(d, gb_all, gc_all, gb, gc);
}

}  // namespace kernels

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, bool trans_a,
          std::span<const double> b, bool trans_b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void selective_scan_forward(ScanDims d, std::span<const double> u, std::span<const double> delta,
                            std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                            std::span<double> y, std::span<double> states) {
  const std::size_t L = d.length, C = d.channels, N = d.state;
  std::vector<double> h(C * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < N; ++s) {
        const double abar = std::exp(delta[t * C + c] * a[c * N + s]);
        h[c * N + s] = abar * h[c * N + s] + delta[t * C + c] * b[t * N + s] * u[t * C + c];
        acc += cm[t * N + s] * h[c * N + s];
        states[(t * C + c) * N + s] = h[c * N + s];
      }
      y[t * C + c] = acc;
    }
  }
}

void selective_scan_backward(ScanDims d, std::span<const double> u, std::span<const double> delta,
                             std::span<const double> a, std::span<const double> b, std::span<const double> cm,
                             std::span<const double> states, std::span<const double> gy, std::span<double> gu,
                             std::span<double> gdelta, std::span<double> ga, std::span<double> gb,
                             std::span<double> gc) {
  const std::size_t L = d.length, C = d.channels, N = d.state;
  std::vector<double> carry(C * N, 0.0);
  std::fill(ga.begin(), ga.end(), 0.0);
  std::fill(gb.begin(), gb.end(), 0.0);
  std::fill(gc.begin(), gc.end(), 0.0);
  for (std::size_t t = L; t-- > 0;) {
    for (std::size_t c = 0; c < C; ++c) {
      const double dt = delta[t * C + c];
      const double x = u[t * C + c];
      const double g = gy[t * C + c];
      double gdt = 0.0, gx = 0.0;
      for (std::size_t s = 0; s < N; ++s) {
        const double h = states[(t * C + c) * N + s];
        const double hprev = t > 0 ? states[((t - 1) * C + c) * N + s] : 0.0;
        gc[t * N + s] += g * h;
        const double dh = carry[c * N + s] + g * cm[t * N + s];
        const double abar = std::exp(dt * a[c * N + s]);
        gdt += dh * hprev * abar * a[c * N + s] + dh * b[t * N + s] * x;
        ga[c * N + s] += dh * hprev * abar * dt;
        gb[t * N + s] += dh * dt * x;
        gx += dh * dt * b[t * N + s];
        carry[c * N + s] = dh * abar;
      }
      gu[t * C + c] = gx;
      gdelta[t * C + c] = gdt;
    }
  }
}

}  // namespace reference

int worker_threads() { return omp_get_max_threads(); }

void set_worker_threads(int n) { omp_set_num_threads(std::max(1, n)); }

}  // namespace molmamba
