#include "molmamba/encoders.hpp"

#include <cmath>

#include "molmamba/error.hpp"

namespace molmamba {

FragmentEncoder FragmentEncoder::create(ParamStore& store, Rng& rng, std::size_t vocab_size, const ModelConfig& cfg) {
  FragmentEncoder enc;
  const std::size_t d = cfg.d_model;
  enc.embed = Embedding::create(store, rng, "gnn_f.embed", vocab_size, d);
  enc.norm = LayerNorm::create(store, "gnn_f.norm", d);
  for (std::size_t k = 0; k < cfg.gnn_f_layers; ++k) {
    const std::string name = "gnn_f.layers." + std::to_string(k);
    enc.layers.push_back({store.add(name + ".eps", {1}, {0.0}), Mlp::create(store, rng, name + ".mlp", d, d, d)});
  }
  return enc;
}

Tensor FragmentEncoder::forward(const Binding& p, const FragmentGraph& graph,
                                std::span<const std::size_t> vocab_ids) const {
  const std::size_t h = vocab_ids.size();
  for (auto id : vocab_ids) {
    if (id >= embed.rows) {
      throw ValidationError("fragment vocabulary id " + std::to_string(id) + " exceeds embedding table of " +
                            std::to_string(embed.rows) + " rows");
    }
  }
  std::vector<double> adj(h * h, 0.0);
  for (const auto& [i, j] : graph.edges) {
    adj[i * h + j] = 1.0;
    adj[j * h + i] = 1.0;
  }
  const auto adjacency = Tensor::constant({h, h}, std::move(adj));
  Tensor x = norm(p, embed(p, vocab_ids));
  for (const auto& layer : layers) {
    const auto self = ops::add(x, ops::scale_by(x, p(layer.eps)));
    x = layer.mlp(p, graph.edges.empty() ? self : ops::add(self, ops::matmul(adjacency, x)));
  }
  return x;
}

std::vector<double> radial_basis(double distance, std::size_t count, double cutoff) {
  const double spacing = cutoff / static_cast<double>(count - 1);
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = (distance - spacing * static_cast<double>(k)) / spacing;
    out[k] = std::exp(-u * u);
  }
  return out;
}

AtomEncoder AtomEncoder::create(ParamStore& store, Rng& rng, const ModelConfig& cfg) {
  AtomEncoder enc;
  const std::size_t d = cfg.d_model;
  enc.rbf_count = cfg.rbf_count;
  enc.rbf_cutoff = cfg.rbf_cutoff;
  enc.elements = Embedding::create(store, rng, "gnn_a.embed", 119, d);
  enc.norm = LayerNorm::create(store, "gnn_a.norm", d);
  for (std::size_t k = 0; k < cfg.gnn_a_layers; ++k) {
    const std::string name = "gnn_a.layers." + std::to_string(k);
    enc.layers.push_back({Mlp::create(store, rng, name + ".filter", cfg.rbf_count, d, d),
                          Mlp::create(store, rng, name + ".update", d, d, d)});
  }
  return enc;
}

Tensor AtomEncoder::forward(const Binding& p, const Molecule& mol, const GraphMatrices& matrices) const {
  const std::size_t l = mol.atom_count();
  std::vector<std::size_t> z(l);
  for (std::size_t i = 0; i < l; ++i) z[i] = static_cast<std::size_t>(mol.atoms[i].z);

  // Directed message edges j -> i over every bond.
  std::vector<std::size_t> src, dst;
  std::vector<double> rbf;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      if (!matrices.adjacent(i, j)) continue;
      dst.push_back(i);
      src.push_back(j);
      const auto basis = radial_basis(matrices.dist(i, j), rbf_count, rbf_cutoff);
      rbf.insert(rbf.end(), basis.begin(), basis.end());
    }
  const auto expansion = Tensor::constant({src.size(), rbf_count}, std::move(rbf));

  Tensor h = norm(p, elements(p, z));
  for (const auto& layer : layers) {
    Tensor m;
    if (src.empty()) {
      m = Tensor::zeros({l, h.dim(1)});
    } else {
      const auto filter = layer.filter(p, expansion);
      m = ops::segment_sum(ops::mul(ops::gather_rows(h, src), filter), dst, l);
    }
    h = ops::add(h, layer.update(p, m));
  }
  return h;
}

DescriptorEncoder DescriptorEncoder::create(ParamStore& store, Rng& rng, const ModelConfig& cfg) {
  return {Mlp::create(store, rng, "e_encoder.mlp", kInputWidth, cfg.d_model, cfg.d_model)};
}

Tensor DescriptorEncoder::input_rows(const EDescriptorVector& desc, const std::vector<bool>& mask) {
  constexpr std::size_t M = EDescriptorVector::kRows;
  if (!mask.empty() && mask.size() != M) throw ValidationError("descriptor mask must have 112 entries");
  std::vector<double> rows(M * kInputWidth, 0.0);
  for (std::size_t r = 0; r < M; ++r) {
    double* row = rows.data() + r * kInputWidth;
    const bool masked = !mask.empty() && mask[r];
    if (!masked) {
      // signed log compresses raw magnitudes that span several decades
      const double raw = desc.raw(r);
      row[0] = std::copysign(std::log1p(std::abs(raw)), raw);
      row[1] = desc.normalized(r);
    }
    row[2] = masked ? 1.0 : 0.0;
    row[3 + EDescriptorVector::segment_of(r)] = 1.0;
  }
  return Tensor::constant({M, kInputWidth}, std::move(rows));
}

Tensor DescriptorEncoder::forward(const Binding& p, const EDescriptorVector& desc, const std::vector<bool>& mask) const {
  return mlp(p, input_rows(desc, mask));
}

}  // namespace molmamba
