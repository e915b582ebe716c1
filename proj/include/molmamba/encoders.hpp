#pragma once

#include <span>
#include <vector>

#include "molmamba/config.hpp"
#include "molmamba/fragmenter.hpp"
#include "molmamba/layers.hpp"
#include "molmamba/molgraph.hpp"

namespace molmamba {

/// Fragment-graph GIN. Input rows are fragment-id embeddings passed through
/// layer norm; each layer computes h <- MLP((1 + eps) h + sum_{j in N(i)} h_j).
struct FragmentEncoder {
  Embedding embed;
  LayerNorm norm;
  struct GinLayer {
    std::size_t eps = 0;
    Mlp mlp;
  };
  std::vector<GinLayer> layers;

  static FragmentEncoder create(ParamStore& store, Rng& rng, std::size_t vocab_size, const ModelConfig& cfg);
  /// F_F: h x d.
  Tensor forward(const Binding& p, const FragmentGraph& graph, std::span<const std::size_t> vocab_ids) const;
};

/// Gaussian radial basis expansion of a distance: centres evenly spaced on
/// [0, cutoff], width equal to the spacing.
std::vector<double> radial_basis(double distance, std::size_t count, double cutoff);

/// Continuous-filter atom encoder:
///   m_i = sum_{j bonded to i} h_j * W(rbf(d_ij)),  h_i <- h_i + Linear(silu(Linear(m_i)))
struct AtomEncoder {
  Embedding elements;  // indexed by element number
  LayerNorm norm;
  struct FilterLayer {
    Mlp filter;  // rbf -> d -> d
    Mlp update;  // d -> d -> d
  };
  std::vector<FilterLayer> layers;
  std::size_t rbf_count = 16;
  double rbf_cutoff = 8.0;

  static AtomEncoder create(ParamStore& store, Rng& rng, const ModelConfig& cfg);
  /// F_A^G: l x d, rows in atom order.
  Tensor forward(const Binding& p, const Molecule& mol, const GraphMatrices& matrices) const;
};

/// Per-row descriptor tokenizer. Row input is
/// (raw, normalized, mask flag, one-hot of the 4 descriptor segments);
/// masked rows have both value channels zeroed.
struct DescriptorEncoder {
  static constexpr std::size_t kInputWidth = 7;
  Mlp mlp;

  static DescriptorEncoder create(ParamStore& store, Rng& rng, const ModelConfig& cfg);
  static Tensor input_rows(const EDescriptorVector& desc, const std::vector<bool>& mask);
  /// S_E^M: M x d. An empty mask means nothing is masked.
  Tensor forward(const Binding& p, const EDescriptorVector& desc, const std::vector<bool>& mask = {}) const;
};

}  // namespace molmamba
