#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "molmamba/molgraph.hpp"

namespace molmamba {

struct VocabEntry {
  std::size_t id = 0;
  std::string pattern;  // canonical subgraph signature
  std::size_t frequency = 0;
};

/// Fragment vocabulary. Entries are stored in mining order: the element
/// singletons first, then each merged pattern in the order it was created.
/// Replaying that order reproduces the mined fragmentation.
class FragmentVocab {
 public:
  /// Largest pattern (in atoms) the miner will create.
  static constexpr std::size_t kMaxPatternAtoms = 8;

  FragmentVocab() = default;
  /// Validates dense ids and unique patterns.
  explicit FragmentVocab(std::vector<VocabEntry> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<VocabEntry>& entries() const noexcept { return entries_; }
  const VocabEntry& operator[](std::size_t id) const { return entries_.at(id); }
  std::optional<std::size_t> find(const std::string& pattern) const;

  friend bool operator==(const FragmentVocab& a, const FragmentVocab& b) {
    return a.entries_.size() == b.entries_.size() &&
           std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(), [](const auto& x, const auto& y) {
             return x.id == y.id && x.pattern == y.pattern && x.frequency == y.frequency;
           });
  }

 private:
  std::vector<VocabEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_pattern_;
};

/// Partition of a molecule's atoms into h connected fragments. Fragment
/// ordinals are numbered by ascending minimum atom index.
struct Fragmentation {
  std::vector<std::size_t> assignment;  // atom -> fragment ordinal
  std::vector<std::size_t> vocab_ids;   // fragment ordinal -> vocabulary id

  std::size_t count() const noexcept { return vocab_ids.size(); }
};

struct FragmentGraph {
  std::size_t nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // i < j, sorted, unique
};

/// Sequence order for the state-space model.
struct NodeOrdering {
  std::vector<std::size_t> perm;       // sorted slot -> atom index
  std::vector<std::size_t> frag_pos;   // sorted slot -> fragment ordinal
  std::vector<std::size_t> intra_pos;  // sorted slot -> rank inside its fragment
};

/// Canonical signature of the subgraph induced by `atoms`: node labels
/// (element, degree inside the pattern) and bond-order-labelled edges under
/// the lexicographically smallest numbering.
std::string pattern_signature(const Molecule& mol, std::span<const std::size_t> atoms);
std::string singleton_signature(int z);

/// Graph-BPE mining: start from one pattern per element and repeatedly merge
/// the most frequent adjacent pattern pair (non-overlapping occurrences per
/// molecule, ties to the smaller signature) until `target_size` entries exist
/// or no pair occurs at least twice.
FragmentVocab build_vocabulary(std::span<const Molecule> corpus, std::size_t target_size);

/// Replays the vocabulary's merge sequence on one molecule.
Fragmentation fragment_molecule(const Molecule& mol, const FragmentVocab& vocab);

FragmentGraph fragment_graph(const Molecule& mol, const Fragmentation& frag);

/// Fragments in ordinal order; inside a fragment, degree descending with ties
/// by atom index.
NodeOrdering sort_nodes(const Molecule& mol, const Fragmentation& frag);

/// Throws ValidationError unless `frag` is a disjoint cover of the atoms by
/// connected, non-empty fragments with ordinals ordered by minimum atom.
void check_fragmentation(const Molecule& mol, const Fragmentation& frag);

void write_vocab(const std::filesystem::path& path, const FragmentVocab& vocab);
FragmentVocab read_vocab(const std::filesystem::path& path);

}  // namespace molmamba
