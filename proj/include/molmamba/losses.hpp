#pragma once

#include "molmamba/config.hpp"
#include "molmamba/tensor.hpp"

namespace molmamba {

/// Symmetric cross-entropy between feature-axis softmaxes of the two h x d
/// fragment matrices. With `detach_targets` each direction treats the other
/// distribution as a fixed pseudo-label.
Tensor distribution_loss(const Tensor& frag_features, const Tensor& pooled_features, double tau,
                         bool detach_targets = true);

struct LossComponents {
  double d = 0.0;
  double s = 0.0;
  double f = 0.0;
  double mask = 0.0;
};

/// lambda_d d + lambda_s s + lambda_f f + lambda_mask mask. Throws
/// NumericError naming the first non-finite component.
double total_loss(const LossComponents& c, const TrainConfig& cfg);
/// Same weighting on tensors; `mask` may be undefined (stage 1).
Tensor total_loss(const Tensor& d, const Tensor& s, const Tensor& f, const Tensor& mask, const TrainConfig& cfg);

}  // namespace molmamba
