#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace molmamba {

struct AtomRecord {
  int z = 0;       // element number, 1..118
  int charge = 0;  // formal charge
};

using Vec3 = std::array<double, 3>;

/// Undirected bond; order 1..3, 4 = aromatic.
struct Bond {
  std::size_t i = 0;
  std::size_t j = 0;
  int order = 1;
};

/// Electronic descriptor block: 112 rows of (raw, normalized), laid out as
/// E-state (25) | molecular property (55) | quantum chemical (7) | charge (25).
class EDescriptorVector {
 public:
  static constexpr std::array<std::size_t, 4> kSegmentSizes{25, 55, 7, 25};
  static constexpr std::size_t kRows = 112;
  static_assert(kSegmentSizes[0] + kSegmentSizes[1] + kSegmentSizes[2] + kSegmentSizes[3] == kRows);

  /// Raw column as given; the normalized column starts at zero.
  explicit EDescriptorVector(std::vector<double> raw);
  EDescriptorVector(std::vector<double> raw, std::vector<double> normalized);

  static std::size_t segment_of(std::size_t row);
  static std::size_t segment_begin(std::size_t segment);

  std::span<const double> raw() const noexcept { return raw_; }
  std::span<const double> normalized() const noexcept { return normalized_; }
  double raw(std::size_t row) const { return raw_.at(row); }
  double normalized(std::size_t row) const { return normalized_.at(row); }

  friend bool operator==(const EDescriptorVector&, const EDescriptorVector&) = default;

 private:
  std::vector<double> raw_;
  std::vector<double> normalized_;
};

struct Molecule {
  std::string id;
  std::vector<AtomRecord> atoms;
  std::vector<Vec3> positions;
  std::vector<Bond> bonds;
  std::map<std::string, double> labels;
  std::optional<EDescriptorVector> descriptors;

  std::size_t atom_count() const noexcept { return atoms.size(); }
  std::size_t bond_count() const noexcept { return bonds.size(); }
};

/// Throws ValidationError when a Molecule invariant is violated.
void validate(const Molecule& mol);

/// Element symbol ("C", "N", ...) or "Z<n>" outside the table.
std::string element_symbol(int z);

struct ParseOptions {
  bool lenient = false;  // unknown keys warn instead of failing
};

/// Parses one JSONL record. `line_no` is used in error messages; unknown keys
/// are appended to `warnings` in lenient mode.
Molecule parse_molecule(std::string_view record, std::size_t line_no = 1, const ParseOptions& opts = {},
                        std::vector<std::string>* warnings = nullptr);
std::string serialize_molecule(const Molecule& mol);

std::vector<Molecule> read_molecules(const std::filesystem::path& path, const ParseOptions& opts = {},
                                     std::vector<std::string>* warnings = nullptr);
void write_molecules(const std::filesystem::path& path, std::span<const Molecule> mols);

/// Adjacency, Euclidean distance and degree of an l-atom molecule.
struct GraphMatrices {
  std::size_t size = 0;
  std::vector<std::uint8_t> adjacency;  // l*l, row-major
  std::vector<double> distance;         // l*l, row-major, Angstrom
  std::vector<int> degrees;

  bool adjacent(std::size_t i, std::size_t j) const { return adjacency[i * size + j] != 0; }
  double dist(std::size_t i, std::size_t j) const { return distance[i * size + j]; }
};

GraphMatrices graph_matrices(const Molecule& mol);

/// Per-descriptor z-score over the corpus (population stdev), clamped to
/// [-10, 10]; zero-variance descriptors map to 0.
std::vector<Molecule> normalize_descriptors(std::vector<Molecule> corpus);

/// Deterministic stand-in for externally computed descriptors, built from
/// permutation-invariant graph and geometry statistics.
EDescriptorVector synth_descriptors(const Molecule& mol, std::uint64_t seed);

/// Relabels atoms: atom k of the result is atom perm[k] of `mol`. Bonds are
/// rewritten with i < j and sorted.
Molecule permute_atoms(const Molecule& mol, std::span<const std::size_t> perm);

/// Atom order that depends only on the labelled graph and geometry, not on
/// the input numbering: colour refinement over (element, charge, bonds),
/// then distance to centroid and summed interatomic distance, then the
/// original index as a last resort for exact symmetries.
std::vector<std::size_t> canonical_order(const Molecule& mol);
Molecule canonicalize(const Molecule& mol);

}  // namespace molmamba
