#include "molmamba/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "molmamba/error.hpp"
#include "molmamba/rng.hpp"

namespace molmamba {

namespace {

constexpr int kC = 6, kN = 7, kO = 8, kF = 9, kS = 16;

int draw_element(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.50) return kC;
  if (u < 0.65) return kN;
  if (u < 0.80) return kO;
  if (u < 0.90) return kS;
  return kF;
}

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Vec3 unit_vector(Rng& rng) {
  // Marsaglia's method
  for (;;) {
    const double x = rng.uniform(-1.0, 1.0), y = rng.uniform(-1.0, 1.0);
    const double s = x * x + y * y;
    if (s >= 1.0 || s == 0.0) continue;
    const double r = 2.0 * std::sqrt(1.0 - s);
    return {x * r, y * r, 1.0 - 2.0 * s};
  }
}

}  // namespace

bool has_planted_motif(const Molecule& mol) {
  std::vector<int> oxygen(mol.atom_count(), 0);
  for (const auto& b : mol.bonds) {
    if (mol.atoms[b.i].z == kO) ++oxygen[b.j];
    if (mol.atoms[b.j].z == kO) ++oxygen[b.i];
  }
  for (std::size_t i = 0; i < mol.atom_count(); ++i) {
    if (mol.atoms[i].z == kS && oxygen[i] >= 2) return true;
  }
  return false;
}

Molecule synth_molecule(std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed(seed, 0x5eed, index));
  const auto n = static_cast<std::size_t>(rng.range(4, 24));
  const bool plant = rng.uniform() < 0.5;

  Molecule mol;
  mol.id = "synth-" + std::to_string(seed) + "-" + std::to_string(index);
  mol.atoms.resize(n);
  for (auto& a : mol.atoms) a.z = draw_element(rng);
  std::size_t s = n;
  if (plant) {
    // S at a random slot, its two O atoms become its next tree children
    s = static_cast<std::size_t>(rng.below(n - 2));
    mol.atoms[s].z = kS;
    mol.atoms[s + 1].z = kO;
    mol.atoms[s + 2].z = kO;
  }

  std::vector<int> degree(n, 0);
  mol.positions.assign(n, Vec3{0.0, 0.0, 0.0});
  auto can_grow = [&](std::size_t j) { return degree[j] < 4 && (mol.atoms[j].z != kF || degree[j] == 0); };
  for (std::size_t i = 1; i < n; ++i) {
    std::size_t parent = 0;
    if (plant && (i == s + 1 || i == s + 2)) {
      parent = s;
    } else {
      std::vector<std::size_t> options;
      for (std::size_t j = 0; j < i; ++j)
        if (can_grow(j)) options.push_back(j);
      if (options.empty())
        for (std::size_t j = 0; j < i; ++j)
          if (degree[j] < 4) options.push_back(j);
      parent = options[rng.below(options.size())];
    }
    mol.bonds.push_back({parent, i, rng.uniform() < 0.15 ? 2 : 1});
    ++degree[parent];
    ++degree[i];
    // keep new atoms at least 1.1 from the rest where a few tries allow it
    Vec3 best{};
    double best_gap = -1.0;
    for (int attempt = 0; attempt < 16; ++attempt) {
      const auto u = unit_vector(rng);
      const double len = rng.uniform(1.4, 1.6);
      Vec3 p{mol.positions[parent][0] + len * u[0], mol.positions[parent][1] + len * u[1],
             mol.positions[parent][2] + len * u[2]};
      double gap = 1e9;
      for (std::size_t j = 0; j < i; ++j)
        if (j != parent) gap = std::min(gap, dist(p, mol.positions[j]));
      if (gap > best_gap) {
        best_gap = gap;
        best = p;
      }
      if (gap >= 1.1) break;
    }
    mol.positions[i] = best;
  }

  const auto extra = static_cast<int>(rng.range(0, 3));
  for (int e = 0; e < extra; ++e) {
    std::vector<std::pair<std::size_t, std::size_t>> options;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!can_grow(i) || !can_grow(j) || mol.atoms[i].z == kF || mol.atoms[j].z == kF) continue;
        if (dist(mol.positions[i], mol.positions[j]) > 2.6) continue;
        const bool bonded = std::any_of(mol.bonds.begin(), mol.bonds.end(), [&](const Bond& b) {
          return (b.i == i && b.j == j) || (b.i == j && b.j == i);
        });
        if (!bonded) options.emplace_back(i, j);
      }
    if (options.empty()) break;
    const auto [i, j] = options[rng.below(options.size())];
    mol.bonds.push_back({i, j, 1});
    ++degree[i];
    ++degree[j];
  }
  std::sort(mol.bonds.begin(), mol.bonds.end(),
            [](const Bond& a, const Bond& b) { return std::pair(a.i, a.j) < std::pair(b.i, b.j); });

  mol.labels[kPlantedLabel] = has_planted_motif(mol) ? 1.0 : 0.0;
  mol.descriptors = synth_descriptors(mol, seed);
  validate(mol);
  return mol;
}

std::vector<Molecule> synth_data(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("synth-data needs at least one molecule");
  std::vector<Molecule> out(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) out[i] = synth_molecule(seed, i);
  return out;
}

}  // namespace molmamba
