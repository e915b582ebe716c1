#pragma once

#include <span>
#include <string>

#include "molmamba/ops.hpp"
#include "molmamba/params.hpp"

namespace molmamba {

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = true;
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                       bool bias = true);
  Tensor operator()(const Binding& p, const Tensor& x) const;
};

/// Layer normalization over the last axis with learned gain and shift.
struct LayerNorm {
  std::size_t gain = 0;
  std::size_t shift = 0;

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Binding& p, const Tensor& x) const;
};

/// linear -> silu -> linear
struct Mlp {
  Linear first;
  Linear second;

  static Mlp create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden,
                    std::size_t out);
  Tensor operator()(const Binding& p, const Tensor& x) const;
};

struct Embedding {
  std::size_t table = 0;
  std::size_t rows = 0;
  std::size_t width = 0;

  static Embedding create(ParamStore& store, Rng& rng, const std::string& name, std::size_t rows, std::size_t width);
  Tensor operator()(const Binding& p, std::span<const std::size_t> index) const;
};

}  // namespace molmamba
