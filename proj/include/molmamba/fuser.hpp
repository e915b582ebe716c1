#pragma once

#include <vector>

#include "molmamba/gssm.hpp"

namespace molmamba {

struct MaskPlan {
  std::vector<bool> mask;  // true = row masked
  double alpha = 0.0;

  std::size_t masked() const;
};

/// Uniform random subset of exactly round(alpha * rows / 100) rows.
MaskPlan make_mask(double alpha, std::size_t rows, Rng& rng);

/// Multi-head scaled dot-product self-attention over all rows.
struct Attention {
  Linear q, k, v, out;
  std::size_t heads = 1;

  static Attention create(ParamStore& store, Rng& rng, const std::string& name, std::size_t width,
                          std::size_t heads);
  Tensor operator()(const Binding& p, const Tensor& x) const;
  /// Row-stochastic attention matrices, one per head (plain values).
  std::vector<Tensor> weights(const Binding& p, const Tensor& x) const;
};

/// softmax(q k^T / sqrt(width)) along rows.
Tensor attention_scores(const Tensor& q, const Tensor& k);

/// u += Mamba(LN u); u += Attn(LN u); u += FFN(LN u)
struct MtBlock {
  LayerNorm norm_mamba, norm_attn, norm_ffn;
  MambaMixer mamba;
  Attention attn;
  Mlp ffn;

  static MtBlock create(ParamStore& store, Rng& rng, const std::string& name, const ModelConfig& cfg);
  Tensor operator()(const Binding& p, const Tensor& u) const;
};

struct MtFuser {
  std::vector<MtBlock> blocks;

  static MtFuser create(ParamStore& store, Rng& rng, const ModelConfig& cfg);
  /// U = MT(descriptors || fragments); descriptor rows come first.
  Tensor forward(const Binding& p, const Tensor& descriptors, const Tensor& fragments) const;
};

/// Two-layer MLP reconstructing the first `rows` rows of U.
struct MaskHead {
  Mlp mlp;

  static MaskHead create(ParamStore& store, Rng& rng, const ModelConfig& cfg);
  Tensor reconstruct(const Binding& p, const Tensor& u, std::size_t rows) const;
  /// Mean over masked rows of the per-row mean squared error.
  Tensor loss(const Binding& p, const Tensor& u, const Tensor& target, const MaskPlan& plan) const;
};

/// mean_rows(U) -> Linear(d, d) -> silu -> Linear(d, tasks); returns 1 x tasks logits.
struct DownstreamHead {
  Mlp mlp;
  std::size_t tasks = 0;

  static DownstreamHead create(ParamStore& store, Rng& rng, const ModelConfig& cfg, std::size_t tasks);
  Tensor operator()(const Binding& p, const Tensor& u) const;
};

}  // namespace molmamba
