#pragma once

#include <cstdint>
#include <vector>

#include "molmamba/molgraph.hpp"

namespace molmamba {

/// Label key of the planted-fragment task.
inline constexpr const char* kPlantedLabel = "planted";

/// True when some S atom is bonded to at least two O atoms.
bool has_planted_motif(const Molecule& mol);

/// One deterministic random molecule: 4..24 atoms drawn from C, N, O, S, F,
/// a random spanning tree plus up to 3 ring-closing bonds, a 3D layout with
/// bond lengths near 1.5, synthetic descriptors and the planted label.
/// About half of the molecules get the motif planted on purpose.
Molecule synth_molecule(std::uint64_t seed, std::size_t index);
std::vector<Molecule> synth_data(std::size_t n, std::uint64_t seed);

}  // namespace molmamba
