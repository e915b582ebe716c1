#pragma once

// Differentiable tensor operations. Every op returns a fresh tensor, never
// touches its inputs' data, and records an exact analytic backward rule.
// Ops throw ShapeError on incompatible operands and NumericError when finite
// inputs produce a non-finite result.

#include <span>
#include <vector>

#include "molmamba/tensor.hpp"

namespace molmamba::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a * s where s holds a single element.
Tensor scale_by(const Tensor& a, const Tensor& s);

/// a[r,c] + b[c], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
/// a[r,c] * g[c], broadcast over rows.
Tensor mul_row(const Tensor& a, const Tensor& g);
/// a[r,c] * s[r], broadcast over columns.
Tensor scale_rows(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[m,k] * w[k,n] + b[n]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis` of a rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Zero-mean unit-variance normalization along `axis`, no affine part.
Tensor layernorm(const Tensor& a, std::size_t axis, double eps = 1e-5);

/// Depthwise causal convolution: x[l,c], w[c,k], b[c].
/// y[t,c] = b[c] + sum_j w[c,j] * x[t-k+1+j, c], zero left padding.
Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row-wise max (resp. sum) of x[l,d] grouped by segment id.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments);
Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments);
/// out[i,:] = table[index[i],:]
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
/// Inclusive prefix sum along axis 0 of a rank-2 tensor.
Tensor cumsum_rows(const Tensor& a);

/// Selective state-space scan: u[l,c], delta[l,c], a[c,n], b[l,n], cm[l,n] -> y[l,c].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& cm);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of a[r,c] as a [1,c] tensor.
Tensor mean_rows(const Tensor& a);

Tensor mse(const Tensor& pred, const Tensor& target);
/// Weighted mean binary cross-entropy on logits. Empty `weights` means all 1.
/// Returns 0 when every weight is 0.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, std::span<const double> weights = {});
/// Mean over rows of -sum_c target[r,c] * log_softmax(logits)[r,c].
Tensor cross_entropy(const Tensor& logits, const Tensor& target_probs);
/// sum_i mask_i * mean_c (pred[i,c] - target[i,c])^2 / sum_i mask_i.
Tensor masked_row_mse(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask);

}  // namespace molmamba::ops
