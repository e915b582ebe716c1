#pragma once

#include <span>
#include <vector>

#include "molmamba/config.hpp"
#include "molmamba/fragmenter.hpp"
#include "molmamba/layers.hpp"
#include "molmamba/molgraph.hpp"

namespace molmamba {

/// Per-token graph gate g_t: mean of exp(-distance) over the bonded
/// neighbours of the atom in sorted slot t, 0 for isolated atoms.
std::vector<double> graph_gate(const GraphMatrices& matrices, const NodeOrdering& ordering);

/// delta'[t,c] = delta[t,c] * (1 + g_t).
Tensor graph_modulation(const Tensor& delta, std::span<const double> gate);

/// Selective-SSM mixer without the residual connection:
///   x, z = Linear(u), Linear(u); x = silu(conv1d(x)); B, C = Linear(x);
///   delta = softplus(Linear(x)), optionally graph-modulated;
///   y = scan(x, delta, A, B, C) * silu(z); return Linear(y)
/// A = -exp(a_log) keeps every state pole strictly negative.
struct MambaMixer {
  Linear in_x;
  Linear in_z;
  std::size_t conv_weight = 0;
  std::size_t conv_bias = 0;
  Linear to_b;
  Linear to_c;
  Linear to_delta;
  std::size_t a_log = 0;
  Linear out;

  static MambaMixer create(ParamStore& store, Rng& rng, const std::string& name, const ModelConfig& cfg);
  /// Empty gate means no graph modulation.
  Tensor operator()(const Binding& p, const Tensor& u, std::span<const double> gate = {}) const;
  /// The scan output before gating and output projection (for oracle checks).
  Tensor scan_only(const Binding& p, const Tensor& u, std::span<const double> gate = {}) const;
  /// A as a plain matrix (channels x state).
  std::vector<double> state_matrix(const ParamStore& store) const;
};

/// Mamba block with Graph SSM: mixer output plus the input.
struct MambaBlock {
  MambaMixer mixer;

  static MambaBlock create(ParamStore& store, Rng& rng, const std::string& name, const ModelConfig& cfg) {
    return {MambaMixer::create(store, rng, name, cfg)};
  }
  Tensor operator()(const Binding& p, const Tensor& x, std::span<const double> gate = {}) const {
    return ops::add(mixer(p, x, gate), x);
  }
};

/// Learned fragment-label and intra-fragment-rank tables.
struct PositionalTables {
  Embedding fragment;
  Embedding rank;
  Linear project;  // d + pf_width + pd_width -> d

  static PositionalTables create(ParamStore& store, Rng& rng, const ModelConfig& cfg);
};

/// F_A^P: rows of the atom features permuted into sorted order, joined with
/// the two positional embeddings and projected back to width d. With
/// `use_pe` false the positional columns are zeros.
Tensor assemble_sequence(const Binding& p, const Tensor& atom_features, const NodeOrdering& ordering,
                         const PositionalTables& tables, bool use_pe = true);

/// F_A^M: element-wise max of the sequence rows of each fragment.
Tensor frag_pool(const Tensor& y, const NodeOrdering& ordering, std::size_t fragments);

/// Fragment ordinals along one diameter path of the fragment graph
/// (longest shortest path; ties to the lexicographically smallest sequence).
std::vector<std::size_t> trunk_path(const FragmentGraph& graph);

struct StructureTargets {
  std::vector<double> trunk;      // multi-hot over vocabulary ids
  std::vector<double> fragments;  // multi-hot over vocabulary ids
};

StructureTargets structure_targets(const FragmentGraph& graph, const Fragmentation& frag, std::size_t vocab_size);

struct MGOutput {
  Tensor sequence;          // y: l x d, sorted order
  Tensor pooled;            // F_A^M: h x d
  Tensor trunk_logits;      // 1 x vocab
  Tensor fragment_logits;   // 1 x vocab
};

/// The Mamba-Graph module: positional assembly, stacked graph-SSM Mamba
/// blocks, FragPool and the two structure heads.
struct MambaGraph {
  PositionalTables tables;
  std::vector<MambaBlock> blocks;
  Linear trunk_head;
  Linear fragment_head;

  static MambaGraph create(ParamStore& store, Rng& rng, std::size_t vocab_size, const ModelConfig& cfg);
  MGOutput forward(const Binding& p, const Tensor& atom_features, const GraphMatrices& matrices,
                   const NodeOrdering& ordering, std::size_t fragments, const ModelConfig& cfg) const;
};

}  // namespace molmamba
