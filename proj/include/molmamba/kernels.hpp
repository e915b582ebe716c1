#pragma once

// Numeric inner loops. The kernels in `molmamba::kernels` are OpenMP
// data-parallel; `molmamba::reference` holds plain serial versions that the
// tests and the benchmark compare against. Both produce bit-identical results
// because the parallel split never changes the per-element summation order.

#include <cstddef>
#include <span>

namespace molmamba {

/// Selective-scan problem dimensions: sequence length, channels, state size.
struct ScanDims {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
};

namespace kernels {

/// C[m,n] (+)= op(A) * op(B) with op = identity or transpose.
/// A is m×k (or k×m when trans_a), B is k×n (or n×k when trans_b).
void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, bool trans_a,
          std::span<const double> b, bool trans_b, std::span<double> c, bool accumulate);

/// Discretized selective scan, parallel over channels.
///   abar = exp(delta[t,c] * a[c,s]); h = abar * h + delta[t,c] * b[t,s] * u[t,c]
///   y[t,c] = sum_s cm[t,s] * h[c,s]
/// `states` (length*channels*state, layout [t][c][s]) receives every h_t.
void selective_scan_forward(ScanDims dims, std::span<const double> u, std::span<const double> delta,
                            std::span<const double> a, std::span<const double> b,
                            std::span<const double> cm, std::span<double> y, std::span<double> states);

/// Gradients of the scan. Outputs are overwritten, not accumulated.
void selective_scan_backward(ScanDims dims, std::span<const double> u, std::span<const double> delta,
                             std::span<const double> a, std::span<const double> b,
                             std::span<const double> cm, std::span<const double> states,
                             std::span<const double> gy, std::span<double> gu, std::span<double> gdelta,
                             std::span<double> ga, std::span<double> gb, std::span<double> gc);

}  // namespace kernels

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, bool trans_a,
          std::span<const double> b, bool trans_b, std::span<double> c, bool accumulate);

void selective_scan_forward(ScanDims dims, std::span<const double> u, std::span<const double> delta,
                            std::span<const double> a, std::span<const double> b,
                            std::span<const double> cm, std::span<double> y, std::span<double> states);

void selective_scan_backward(ScanDims dims, std::span<const double> u, std::span<const double> delta,
                             std::span<const double> a, std::span<const double> b,
                             std::span<const double> cm, std::span<const double> states,
                             std::span<const double> gy, std::span<double> gu, std::span<double> gdelta,
                             std::span<double> ga, std::span<double> gb, std::span<double> gc);

}  // namespace reference

/// Worker count used by the parallel kernels (MOLMAMBA_THREADS caps it).
int worker_threads();
void set_worker_threads(int n);

}  // namespace molmamba
