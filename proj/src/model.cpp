#include "molmamba/model.hpp"

#include <numeric>

#include "molmamba/error.hpp"
#include "molmamba/losses.hpp"

namespace molmamba {

NodeOrdering random_ordering(const Fragmentation& frag, Rng& rng) {
  const std::size_t l = frag.assignment.size();
  NodeOrdering o;
  o.perm.resize(l);
  std::iota(o.perm.begin(), o.perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(o.perm));
  std::vector<std::size_t> seen(frag.count(), 0);
  for (auto a : o.perm) {
    const auto f = frag.assignment[a];
    o.frag_pos.push_back(f);
    o.intra_pos.push_back(seen[f]++);
  }
  return o;
}

PreparedMolecule prepare(const Molecule& mol, const FragmentVocab& vocab, const ModelConfig& cfg,
                         std::uint64_t seed, std::size_t index) {
  if (!mol.descriptors) throw ValidationError("molecule '" + mol.id + "' has no descriptor rows");
  PreparedMolecule pm;
  pm.mol = canonicalize(mol);
  pm.source_index = index;
  pm.matrices = graph_matrices(pm.mol);
  pm.frag = fragment_molecule(pm.mol, vocab);
  pm.graph = fragment_graph(pm.mol, pm.frag);
  if (cfg.use_sort) {
    pm.ordering = sort_nodes(pm.mol, pm.frag);
  } else {
    Rng rng(derive_seed(seed, 0x5057, index));
    pm.ordering = random_ordering(pm.frag, rng);
  }
  pm.targets = structure_targets(pm.graph, pm.frag, vocab.size());
  return pm;
}

std::vector<PreparedMolecule> prepare_all(std::span<const Molecule> mols, const FragmentVocab& vocab,
                                          const ModelConfig& cfg, std::uint64_t seed) {
  std::vector<PreparedMolecule> out(mols.size());
  std::vector<std::string> errors(mols.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < mols.size(); ++i) {
    try {
      out[i] = prepare(mols[i], vocab, cfg, seed, i);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < mols.size(); ++i) {
    if (!errors[i].empty()) throw ValidationError("molecule '" + mols[i].id + "': " + errors[i]);
  }
  return out;
}

MolMamba::MolMamba(const ModelConfig& cfg, std::size_t vocab_size, std::size_t tasks, std::uint64_t seed)
    : cfg_(cfg), vocab_size_(vocab_size) {
  Rng rng(derive_seed(seed, 0x1417));
  gnn_f_ = FragmentEncoder::create(store_, rng, vocab_size, cfg_);
  gnn_a_ = AtomEncoder::create(store_, rng, cfg_);
  e_encoder_ = DescriptorEncoder::create(store_, rng, cfg_);
  mg_ = MambaGraph::create(store_, rng, vocab_size, cfg_);
  mt_ = MtFuser::create(store_, rng, cfg_);
  mask_head_ = MaskHead::create(store_, rng, cfg_);
  if (tasks > 0) head_ = DownstreamHead::create(store_, rng, cfg_, tasks);
}

Tensor MolMamba::fragment_features(const Binding& p, const PreparedMolecule& m) const {
  return gnn_f_.forward(p, m.graph, m.frag.vocab_ids);
}

Tensor MolMamba::atom_features(const Binding& p, const PreparedMolecule& m) const {
  return gnn_a_.forward(p, m.mol, m.matrices);
}

MGOutput MolMamba::structure(const Binding& p, const PreparedMolecule& m) const {
  return mg_.forward(p, atom_features(p, m), m.matrices, m.ordering, m.frag.count(), cfg_);
}

Tensor MolMamba::descriptor_tokens(const Binding& p, const PreparedMolecule& m, const std::vector<bool>& mask) const {
  return e_encoder_.forward(p, *m.mol.descriptors, mask);
}

Tensor MolMamba::fused(const Binding& p, const Tensor& descriptors, const Tensor& pooled) const {
  return mt_.forward(p, descriptors, pooled);
}

PretrainTerms MolMamba::pretrain_terms(const Binding& p, const PreparedMolecule& m, const TrainConfig& train,
                                       const MaskPlan* mask) const {
  PretrainTerms t;
  const auto mg = structure(p, m);
  const auto ff = fragment_features(p, m);
  t.loss_d = distribution_loss(ff, mg.pooled, train.tau, train.detach_pseudo_labels);
  const std::size_t v = vocab_size_;
  t.loss_s = ops::bce_with_logits(mg.trunk_logits, Tensor::constant({1, v}, m.targets.trunk));
  t.loss_f = ops::bce_with_logits(mg.fragment_logits, Tensor::constant({1, v}, m.targets.fragments));
  if (mask != nullptr) {
    const auto target = descriptor_tokens(p, m).detach();
    const auto u = fused(p, descriptor_tokens(p, m, mask->mask), mg.pooled);
    t.loss_mask = mask_head_.loss(p, u, target, *mask);
  }
  return t;
}

Tensor MolMamba::predict(const Binding& p, const PreparedMolecule& m) const {
  if (!head_) throw ValidationError("model has no prediction head");
  const auto mg = structure(p, m);
  return (*head_)(p, fused(p, descriptor_tokens(p, m), mg.pooled));
}

}  // namespace molmamba
