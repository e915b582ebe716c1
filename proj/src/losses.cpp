#include "molmamba/losses.hpp"

#include <cmath>

#include "molmamba/error.hpp"
#include "molmamba/ops.hpp"

namespace molmamba {

Tensor distribution_loss(const Tensor& frag_features, const Tensor& pooled_features, double tau,
                         bool detach_targets) {
  if (frag_features.shape() != pooled_features.shape()) {
    throw ShapeError("distribution_loss: " + shape_str(frag_features.shape()) + " vs " +
                     shape_str(pooled_features.shape()));
  }
  const auto a = ops::scale(frag_features, tau);
  const auto b = ops::scale(pooled_features, tau);
  auto p = ops::softmax(a, 1);
  auto q = ops::softmax(b, 1);
  if (detach_targets) {
    p = p.detach();
    q = q.detach();
  }
  return ops::add(ops::cross_entropy(b, p), ops::cross_entropy(a, q));
}

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("loss component ") + name + " is not finite");
}

}  // namespace

double total_loss(const LossComponents& c, const TrainConfig& cfg) {
  require_finite(c.d, "loss_d");
  require_finite(c.s, "loss_s");
  require_finite(c.f, "loss_f");
  require_finite(c.mask, "loss_mask");
  return cfg.lambda_d * c.d + cfg.lambda_s * c.s + cfg.lambda_f * c.f + cfg.lambda_mask * c.mask;
}

Tensor total_loss(const Tensor& d, const Tensor& s, const Tensor& f, const Tensor& mask, const TrainConfig& cfg) {
  require_finite(d.item(), "loss_d");
  require_finite(s.item(), "loss_s");
  require_finite(f.item(), "loss_f");
  auto t = ops::add(ops::add(ops::scale(d, cfg.lambda_d), ops::scale(s, cfg.lambda_s)), ops::scale(f, cfg.lambda_f));
  if (mask.defined()) {
    require_finite(mask.item(), "loss_mask");
    t = ops::add(t, ops::scale(mask, cfg.lambda_mask));
  }
  return t;
}

}  // namespace molmamba
