#include "molmamba/layers.hpp"

namespace molmamba {

Linear Linear::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                      bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  l.weight = store.add(name + ".w", {in, out}, init_fan_in_uniform(rng, in, in * out));
  if (bias) l.bias = store.add(name + ".b", {out}, init_constant(out, 0.0));
  return l;
}

Tensor Linear::operator()(const Binding& p, const Tensor& x) const {
  return ops::linear(x, p(weight), has_bias ? p(bias) : Tensor{});
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gain = store.add(name + ".gain", {width}, init_constant(width, 1.0));
  ln.shift = store.add(name + ".shift", {width}, init_constant(width, 0.0));
  return ln;
}

Tensor LayerNorm::operator()(const Binding& p, const Tensor& x) const {
  return ops::add_row(ops::mul_row(ops::layernorm(x, 1), p(gain)), p(shift));
}

Mlp Mlp::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t out) {
  return {Linear::create(store, rng, name + ".0", in, hidden), Linear::create(store, rng, name + ".1", hidden, out)};
}

Tensor Mlp::operator()(const Binding& p, const Tensor& x) const { return second(p, ops::silu(first(p, x))); }

Embedding Embedding::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t rows,
                            std::size_t width) {
  Embedding e;
  e.rows = rows;
  e.width = width;
  e.table = store.add(name, {rows, width}, init_fan_in_uniform(rng, width, rows * width));
  return e;
}

Tensor Embedding::operator()(const Binding& p, std::span<const std::size_t> index) const {
  return ops::gather_rows(p(table), index);
}

}  // namespace molmamba
