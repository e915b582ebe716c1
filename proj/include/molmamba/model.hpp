#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "molmamba/config.hpp"
#include "molmamba/encoders.hpp"
#include "molmamba/fragmenter.hpp"
#include "molmamba/fuser.hpp"
#include "molmamba/gssm.hpp"

namespace molmamba {

/// Everything about one molecule that does not depend on parameters.
struct PreparedMolecule {
  Molecule mol;  // atoms in canonical order
  std::size_t source_index = 0;
  GraphMatrices matrices;
  Fragmentation frag;
  FragmentGraph graph;
  NodeOrdering ordering;
  StructureTargets targets;
};

/// Sequence order that ignores the degree sort: atoms in a random order,
/// fragment ordinals unchanged, ranks by encounter order.
NodeOrdering random_ordering(const Fragmentation& frag, Rng& rng);

/// Canonicalizes atom order, fragments, builds the fragment graph, the node
/// ordering and the structure targets. Descriptors are required.
PreparedMolecule prepare(const Molecule& mol, const FragmentVocab& vocab, const ModelConfig& cfg,
                         std::uint64_t seed = 0, std::size_t index = 0);
std::vector<PreparedMolecule> prepare_all(std::span<const Molecule> mols, const FragmentVocab& vocab,
                                          const ModelConfig& cfg, std::uint64_t seed = 0);

struct PretrainTerms {
  Tensor loss_d;
  Tensor loss_s;
  Tensor loss_f;
  Tensor loss_mask;  // undefined when no mask was given
};

class MolMamba {
 public:
  /// `tasks` = 0 builds the pretraining model without a prediction head.
  MolMamba(const ModelConfig& cfg, std::size_t vocab_size, std::size_t tasks, std::uint64_t seed);

  ParamStore& params() noexcept { return store_; }
  const ParamStore& params() const noexcept { return store_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t tasks() const noexcept { return head_ ? head_->tasks : 0; }

  Tensor fragment_features(const Binding& p, const PreparedMolecule& m) const;
  Tensor atom_features(const Binding& p, const PreparedMolecule& m) const;
  MGOutput structure(const Binding& p, const PreparedMolecule& m) const;
  Tensor descriptor_tokens(const Binding& p, const PreparedMolecule& m, const std::vector<bool>& mask = {}) const;
  /// U = MT(S_E || F_A^M).
  Tensor fused(const Binding& p, const Tensor& descriptors, const Tensor& pooled) const;

  /// All four pretraining losses for one molecule; loss_mask only when `mask` is set.
  PretrainTerms pretrain_terms(const Binding& p, const PreparedMolecule& m, const TrainConfig& train,
                               const MaskPlan* mask) const;
  /// 1 x tasks prediction logits (no masking).
  Tensor predict(const Binding& p, const PreparedMolecule& m) const;

  const MaskHead& mask_head() const noexcept { return mask_head_; }
  const MtFuser& fuser() const noexcept { return mt_; }
  const MambaGraph& mamba_graph() const noexcept { return mg_; }

 private:
  ModelConfig cfg_;
  std::size_t vocab_size_;
  ParamStore store_;
  FragmentEncoder gnn_f_;
  AtomEncoder gnn_a_;
  DescriptorEncoder e_encoder_;
  MambaGraph mg_;
  MtFuser mt_;
  MaskHead mask_head_;
  std::optional<DownstreamHead> head_;
};

}  // namespace molmamba
