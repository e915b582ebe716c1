#include "molmamba/fuser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "molmamba/error.hpp"

namespace molmamba {

std::size_t MaskPlan::masked() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }

MaskPlan make_mask(double alpha, std::size_t rows, Rng& rng) {
  const double want = std::round(alpha * static_cast<double>(rows) / 100.0);
  if (!(want >= 1.0) || want > static_cast<double>(rows)) {
    throw ValidationError("mask ratio " + std::to_string(alpha) + "% selects " + std::to_string(want) + " of " +
                          std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(idx));
  MaskPlan plan{std::vector<bool>(rows, false), alpha};
  for (std::size_t i = 0; i < static_cast<std::size_t>(want); ++i) plan.mask[idx[i]] = true;
  return plan;
}

Attention Attention::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t width,
                            std::size_t heads) {
  if (heads == 0 || width % heads != 0) {
    throw ValidationError("attention width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads) + " heads");
  }
  Attention a;
  a.q = Linear::create(store, rng, name + ".q", width, width);
  a.k = Linear::create(store, rng, name + ".k", width, width);
  a.v = Linear::create(store, rng, name + ".v", width, width);
  a.out = Linear::create(store, rng, name + ".out", width, width);
  a.heads = heads;
  return a;
}

Tensor attention_scores(const Tensor& q, const Tensor& k) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv), 1);
}

Tensor Attention::operator()(const Binding& p, const Tensor& x) const {
  const auto qq = q(p, x), kk = k(p, x), vv = v(p, x);
  const std::size_t width = q.out / heads;
  std::vector<Tensor> parts;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto b = h * width, e = b + width;
    const auto w = attention_scores(ops::slice(qq, 1, b, e), ops::slice(kk, 1, b, e));
    parts.push_back(ops::matmul(w, ops::slice(vv, 1, b, e)));
  }
  return out(p, ops::concat(parts, 1));
}

std::vector<Tensor> Attention::weights(const Binding& p, const Tensor& x) const {
  const auto qq = q(p, x), kk = k(p, x);
  const std::size_t width = q.out / heads;
  std::vector<Tensor> w;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto b = h * width, e = b + width;
    w.push_back(attention_scores(ops::slice(qq, 1, b, e), ops::slice(kk, 1, b, e)).detach());
  }
  return w;
}

MtBlock MtBlock::create(ParamStore& store, Rng& rng, const std::string& name, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  MtBlock b;
  b.norm_mamba = LayerNorm::create(store, name + ".norm_mamba", d);
  b.mamba = MambaMixer::create(store, rng, name + ".mamba", cfg);
  b.norm_attn = LayerNorm::create(store, name + ".norm_attn", d);
  b.attn = Attention::create(store, rng, name + ".attn", d, cfg.attn_heads);
  b.norm_ffn = LayerNorm::create(store, name + ".norm_ffn", d);
  b.ffn = Mlp::create(store, rng, name + ".ffn", d, 4 * d, d);
  return b;
}

Tensor MtBlock::operator()(const Binding& p, const Tensor& u) const {
  auto x = ops::add(u, mamba(p, norm_mamba(p, u)));
  x = ops::add(x, attn(p, norm_attn(p, x)));
  return ops::add(x, ffn(p, norm_ffn(p, x)));
}

MtFuser MtFuser::create(ParamStore& store, Rng& rng, const ModelConfig& cfg) {
  MtFuser f;
  for (std::size_t k = 0; k < cfg.mt_layers; ++k) {
    f.blocks.push_back(MtBlock::create(store, rng, "mt." + std::to_string(k), cfg));
  }
  return f;
}

Tensor MtFuser::forward(const Binding& p, const Tensor& descriptors, const Tensor& fragments) const {
  Tensor u = descriptors;
  if (fragments.defined() && fragments.dim(0) > 0) {
    const Tensor parts[] = {descriptors, fragments};
    u = ops::concat(parts, 0);
  }
  for (const auto& b : blocks) u = b(p, u);
  return u;
}

MaskHead MaskHead::create(ParamStore& store, Rng& rng, const ModelConfig& cfg) {
  return {Mlp::create(store, rng, "mask_head", cfg.d_model, cfg.d_model, cfg.d_model)};
}

Tensor MaskHead::reconstruct(const Binding& p, const Tensor& u, std::size_t rows) const {
  return mlp(p, ops::slice(u, 0, 0, rows));
}

Tensor MaskHead::loss(const Binding& p, const Tensor& u, const Tensor& target, const MaskPlan& plan) const {
  const auto pred = reconstruct(p, u, plan.mask.size());
  return ops::masked_row_mse(pred, target.detach(), plan.mask);
}

DownstreamHead DownstreamHead::create(ParamStore& store, Rng& rng, const ModelConfig& cfg, std::size_t tasks) {
  return {Mlp::create(store, rng, "head", cfg.d_model, cfg.d_model, tasks), tasks};
}

Tensor DownstreamHead::operator()(const Binding& p, const Tensor& u) const { return mlp(p, ops::mean_rows(u)); }

}  // namespace molmamba
