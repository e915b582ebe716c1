#include "molmamba/molgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

#include "molmamba/error.hpp"
#include "molmamba/rng.hpp"

namespace molmamba {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr std::array<std::string_view, 119> kSymbols{
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",
    "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho",
    "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md",
    "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

// Pauling electronegativity for the light elements; 2.0 elsewhere.
double electronegativity(int z) {
  switch (z) {
    case 1: return 2.20;
    case 5: return 2.04;
    case 6: return 2.55;
    case 7: return 3.04;
    case 8: return 3.44;
    case 9: return 3.98;
    case 14: return 1.90;
    case 15: return 2.19;
    case 16: return 2.58;
    case 17: return 3.16;
    case 35: return 2.96;
    case 53: return 2.66;
    default: return 2.0;
  }
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Sum that does not depend on the order the terms were produced in.
double sorted_sum(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

ValidationError record_error(std::size_t line_no, const std::string& what) {
  return ValidationError("line " + std::to_string(line_no) + ": " + what);
}

template <class T>
T get_number(const json& v, std::size_t line_no, const char* what) {
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw record_error(line_no, std::string(what) + " must be an integer");
  } else {
    if (!v.is_number()) throw record_error(line_no, std::string(what) + " must be a number");
  }
  return v.get<T>();
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::size_t line_no,
                const ParseOptions& opts, std::vector<std::string>* warnings, const std::string& where) {
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) != allowed.end()) continue;
    const std::string msg = "unknown key \"" + item.key() + "\" in " + where;
    if (!opts.lenient) throw record_error(line_no, msg);
    if (warnings) warnings->push_back("line " + std::to_string(line_no) + ": " + msg);
  }
}

std::vector<std::vector<std::pair<std::size_t, int>>> neighbor_lists(const Molecule& mol) {
  std::vector<std::vector<std::pair<std::size_t, int>>> nbr(mol.atom_count());
  for (const auto& b : mol.bonds) {
    nbr[b.i].emplace_back(b.j, b.order);
    nbr[b.j].emplace_back(b.i, b.order);
  }
  return nbr;
}

// Replace arbitrary comparable keys by their dense rank.
template <class Key>
std::vector<std::size_t> dense_rank(const std::vector<Key>& keys) {
  std::vector<Key> sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> out(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
  }
  return out;
}

}  // namespace

EDescriptorVector::EDescriptorVector(std::vector<double> raw)
    : EDescriptorVector(raw, std::vector<double>(raw.size(), 0.0)) {}

EDescriptorVector::EDescriptorVector(std::vector<double> raw, std::vector<double> normalized)
    : raw_(std::move(raw)), normalized_(std::move(normalized)) {
  if (raw_.size() != kRows || normalized_.size() != kRows) {
    throw ValidationError("descriptor vector must have exactly " + std::to_string(kRows) + " rows, got " +
                          std::to_string(raw_.size()));
  }
}

std::size_t EDescriptorVector::segment_of(std::size_t row) {
  std::size_t end = 0;
  for (std::size_t s = 0; s < kSegmentSizes.size(); ++s) {
    end += kSegmentSizes[s];
    if (row < end) return s;
  }
  throw ValidationError("descriptor row " + std::to_string(row) + " out of range");
}

std::size_t EDescriptorVector::segment_begin(std::size_t segment) {
  std::size_t b = 0;
  for (std::size_t s = 0; s < segment; ++s) b += kSegmentSizes.at(s);
  return b;
}

std::string element_symbol(int z) {
  if (z >= 1 && z < static_cast<int>(kSymbols.size())) return std::string(kSymbols[static_cast<std::size_t>(z)]);
  return "Z" + std::to_string(z);
}

void validate(const Molecule& mol) {
  const std::size_t l = mol.atom_count();
  const std::string who = "molecule '" + mol.id + "': ";
  if (l == 0) throw ValidationError(who + "has no atoms");
  if (mol.positions.size() != l) {
    throw ValidationError(who + std::to_string(l) + " atoms but " + std::to_string(mol.positions.size()) +
                          " positions");
  }
  for (const auto& a : mol.atoms) {
    if (a.z < 1 || a.z > 118) throw ValidationError(who + "element number " + std::to_string(a.z) + " out of range");
  }
  for (const auto& p : mol.positions) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw ValidationError(who + "non-finite position");
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : mol.bonds) {
    if (b.i >= l || b.j >= l) {
      throw ValidationError(who + "bond (" + std::to_string(b.i) + "," + std::to_string(b.j) +
                            ") out of range for " + std::to_string(l) + " atoms");
    }
    if (b.i == b.j) throw ValidationError(who + "self bond on atom " + std::to_string(b.i));
    if (b.order < 1 || b.order > 4) throw ValidationError(who + "bond order " + std::to_string(b.order) + " invalid");
    if (!seen.emplace(std::min(b.i, b.j), std::max(b.i, b.j)).second) {
      throw ValidationError(who + "duplicate bond (" + std::to_string(b.i) + "," + std::to_string(b.j) + ")");
    }
  }
}

Molecule parse_molecule(std::string_view record, std::size_t line_no, const ParseOptions& opts,
                        std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(record);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, "byte " + std::to_string(e.byte) + ": malformed JSON");
  }
  if (!doc.is_object()) throw ParseError(line_no, "record is not a JSON object");
  check_keys(doc, {"id", "atoms", "pos", "bonds", "labels", "desc"}, line_no, opts, warnings, "record");
  for (const char* key : {"id", "atoms", "pos", "bonds"}) {
    if (!doc.contains(key)) throw record_error(line_no, std::string("missing key \"") + key + "\"");
  }

  Molecule mol;
  if (!doc["id"].is_string()) throw record_error(line_no, "id must be a string");
  mol.id = doc["id"].get<std::string>();

  if (!doc["atoms"].is_array()) throw record_error(line_no, "atoms must be an array");
  for (const auto& a : doc["atoms"]) {
    if (!a.is_object() || !a.contains("z") || !a.contains("charge")) {
      throw record_error(line_no, "atom entries need \"z\" and \"charge\"");
    }
    check_keys(a, {"z", "charge"}, line_no, opts, warnings, "atom");
    mol.atoms.push_back({get_number<int>(a["z"], line_no, "z"), get_number<int>(a["charge"], line_no, "charge")});
  }

  if (!doc["pos"].is_array()) throw record_error(line_no, "pos must be an array");
  for (const auto& p : doc["pos"]) {
    if (!p.is_array() || p.size() != 3) throw record_error(line_no, "positions must be [x,y,z] triples");
    mol.positions.push_back({get_number<double>(p[0], line_no, "x"), get_number<double>(p[1], line_no, "y"),
                             get_number<double>(p[2], line_no, "z")});
  }

  if (!doc["bonds"].is_array()) throw record_error(line_no, "bonds must be an array");
  for (const auto& b : doc["bonds"]) {
    if (!b.is_array() || b.size() != 3) throw record_error(line_no, "bonds must be [i,j,order] triples");
    const auto i = get_number<long long>(b[0], line_no, "bond index");
    const auto j = get_number<long long>(b[1], line_no, "bond index");
    if (i < 0 || j < 0) throw record_error(line_no, "negative bond index");
    mol.bonds.push_back(
        {static_cast<std::size_t>(i), static_cast<std::size_t>(j), get_number<int>(b[2], line_no, "bond order")});
  }

  if (doc.contains("labels")) {
    if (!doc["labels"].is_object()) throw record_error(line_no, "labels must be an object");
    for (const auto& item : doc["labels"].items()) {
      mol.labels[item.key()] = get_number<double>(item.value(), line_no, "label");
    }
  }

  if (doc.contains("desc")) {
    if (!doc["desc"].is_array()) throw record_error(line_no, "desc must be an array");
    std::vector<double> raw;
    for (const auto& v : doc["desc"]) raw.push_back(get_number<double>(v, line_no, "descriptor"));
    if (raw.size() != EDescriptorVector::kRows) {
      throw record_error(line_no, "desc must hold " + std::to_string(EDescriptorVector::kRows) + " values, got " +
                                      std::to_string(raw.size()));
    }
    mol.descriptors.emplace(std::move(raw));
  }

  try {
    validate(mol);
  } catch (const ValidationError& e) {
    throw record_error(line_no, e.what());
  }
  return mol;
}

std::string serialize_molecule(const Molecule& mol) {
  ordered_json doc;
  doc["id"] = mol.id;
  doc["atoms"] = ordered_json::array();
  for (const auto& a : mol.atoms) doc["atoms"].push_back({{"z", a.z}, {"charge", a.charge}});
  doc["pos"] = ordered_json::array();
  for (const auto& p : mol.positions) doc["pos"].push_back({p[0], p[1], p[2]});
  doc["bonds"] = ordered_json::array();
  for (const auto& b : mol.bonds) doc["bonds"].push_back({b.i, b.j, b.order});
  if (!mol.labels.empty()) {
    doc["labels"] = ordered_json::object();
    for (const auto& [k, v] : mol.labels) doc["labels"][k] = v;
  }
  if (mol.descriptors) {
    doc["desc"] = ordered_json::array();
    for (double v : mol.descriptors->raw()) doc["desc"].push_back(v);
  }
  return doc.dump();
}

std::vector<Molecule> read_molecules(const std::filesystem::path& path, const ParseOptions& opts,
                                     std::vector<std::string>* warnings) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open molecule file " + path.string());
  std::vector<Molecule> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_molecule(line, line_no, opts, warnings));
  }
  return out;
}

void write_molecules(const std::filesystem::path& path, std::span<const Molecule> mols) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ValidationError("cannot write molecule file " + path.string());
  for (const auto& m : mols) os << serialize_molecule(m) << '\n';
}

GraphMatrices graph_matrices(const Molecule& mol) {
  const std::size_t l = mol.atom_count();
  GraphMatrices g;
  g.size = l;
  g.adjacency.assign(l * l, 0);
  g.distance.assign(l * l, 0.0);
  g.degrees.assign(l, 0);
  for (const auto& b : mol.bonds) {
    g.adjacency[b.i * l + b.j] = 1;
    g.adjacency[b.j * l + b.i] = 1;
    ++g.degrees[b.i];
    ++g.degrees[b.j];
  }
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i + 1; j < l; ++j) {
      const double d = distance(mol.positions[i], mol.positions[j]);
      g.distance[i * l + j] = d;
      g.distance[j * l + i] = d;
    }
  return g;
}

std::vector<Molecule> normalize_descriptors(std::vector<Molecule> corpus) {
  constexpr std::size_t M = EDescriptorVector::kRows;
  for (const auto& m : corpus) {
    if (!m.descriptors) throw ValidationError("molecule '" + m.id + "' has no descriptor rows");
  }
  const double n = static_cast<double>(corpus.size());
  std::vector<double> mean(M, 0.0), sd(M, 0.0);
  for (const auto& m : corpus)
    for (std::size_t r = 0; r < M; ++r) mean[r] += m.descriptors->raw(r);
  for (auto& x : mean) x /= n;
  for (const auto& m : corpus)
    for (std::size_t r = 0; r < M; ++r) {
      const double d = m.descriptors->raw(r) - mean[r];
      sd[r] += d * d;
    }
  for (auto& x : sd) x = std::sqrt(x / n);

  const auto count = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    auto& m = corpus[static_cast<std::size_t>(k)];
    std::vector<double> raw(m.descriptors->raw().begin(), m.descriptors->raw().end());
    std::vector<double> norm(M, 0.0);
    for (std::size_t r = 0; r < M; ++r) {
      const double scale = std::max(1.0, std::abs(mean[r]));
      if (sd[r] <= 1e-12 * scale) continue;
      norm[r] = std::clamp((raw[r] - mean[r]) / sd[r], -10.0, 10.0);
    }
    m.descriptors.emplace(std::move(raw), std::move(norm));
  }
  return corpus;
}

EDescriptorVector synth_descriptors(const Molecule& mol, std::uint64_t seed) {
  constexpr std::size_t M = EDescriptorVector::kRows;
  const std::size_t l = mol.atom_count();
  const auto nbr = neighbor_lists(mol);
  const std::size_t seg_s = EDescriptorVector::segment_begin(0), seg_m = EDescriptorVector::segment_begin(1),
                    seg_q = EDescriptorVector::segment_begin(2), seg_c = EDescriptorVector::segment_begin(3);
  // Each channel collects its terms; summing them sorted keeps the result
  // independent of atom numbering.
  std::vector<std::vector<double>> terms(M);

  auto hashed = [&](std::size_t begin, std::size_t width, std::uint64_t a, std::uint64_t b, double value) {
    const std::uint64_t h = derive_seed(seed, a, b);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    terms[begin + (h % width)].push_back(sign * value);
  };

  // E-state-like segment: hashed element and element/degree counts.
  for (std::size_t i = 0; i < l; ++i) {
    const auto z = static_cast<std::uint64_t>(mol.atoms[i].z);
    hashed(seg_s, EDescriptorVector::kSegmentSizes[0], 1000 + z, 0, 1.0);
    hashed(seg_s, EDescriptorVector::kSegmentSizes[0], 2000 + z, nbr[i].size(), 1.0);
  }

  // Molecular property segment: fixed counts followed by hashed bond types.
  std::size_t heavy = 0;
  int charge_sum = 0, charge_abs = 0;
  for (const auto& a : mol.atoms) {
    heavy += a.z > 1 ? 1 : 0;
    charge_sum += a.charge;
    charge_abs += std::abs(a.charge);
  }
  terms[seg_m + 0].push_back(static_cast<double>(l));
  terms[seg_m + 1].push_back(static_cast<double>(mol.bond_count()));
  terms[seg_m + 2].push_back(static_cast<double>(heavy));
  for (std::size_t i = 0; i < l; ++i) terms[seg_m + 3 + std::min<std::size_t>(nbr[i].size(), 6)].push_back(1.0);
  for (const auto& b : mol.bonds) terms[seg_m + 10 + static_cast<std::size_t>(b.order - 1)].push_back(1.0);
  {
    // cyclomatic number q - l + components
    std::vector<std::size_t> comp(l);
    std::iota(comp.begin(), comp.end(), 0);
    auto find = [&](std::size_t x) {
      while (comp[x] != x) x = comp[x] = comp[comp[x]];
      return x;
    };
    std::size_t components = l;
    for (const auto& b : mol.bonds) {
      const auto a = find(b.i), c = find(b.j);
      if (a != c) {
        comp[a] = c;
        --components;
      }
    }
    terms[seg_m + 14].push_back(static_cast<double>(mol.bond_count() + components) - static_cast<double>(l));
  }
  terms[seg_m + 15].push_back(charge_sum);
  terms[seg_m + 16].push_back(charge_abs);
  terms[seg_m + 17].push_back(l ? 2.0 * static_cast<double>(mol.bond_count()) / static_cast<double>(l) : 0.0);
  constexpr std::size_t kFixedM = 18;
  for (const auto& b : mol.bonds) {
    const auto za = static_cast<std::uint64_t>(std::min(mol.atoms[b.i].z, mol.atoms[b.j].z));
    const auto zb = static_cast<std::uint64_t>(std::max(mol.atoms[b.i].z, mol.atoms[b.j].z));
    hashed(seg_m + kFixedM, EDescriptorVector::kSegmentSizes[1] - kFixedM, 3000 + za * 131 + zb,
           static_cast<std::uint64_t>(b.order), 1.0);
  }

  // Quantum-chemical segment: seven distance moments.
  std::vector<double> pair_d, bond_d;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i + 1; j < l; ++j) pair_d.push_back(distance(mol.positions[i], mol.positions[j]));
  for (const auto& b : mol.bonds) bond_d.push_back(distance(mol.positions[b.i], mol.positions[b.j]));
  auto moments = [](const std::vector<double>& xs) {
    if (xs.empty()) return std::pair{0.0, 0.0};
    const double mu = sorted_sum(xs) / static_cast<double>(xs.size());
    std::vector<double> sq;
    for (double x : xs) sq.push_back((x - mu) * (x - mu));
    return std::pair{mu, std::sqrt(sorted_sum(sq) / static_cast<double>(xs.size()))};
  };
  const auto [pd_mean, pd_sd] = moments(pair_d);
  const auto [bd_mean, bd_sd] = moments(bond_d);
  Vec3 centroid{};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> xs;
    for (const auto& p : mol.positions) xs.push_back(p[k]);
    centroid[k] = sorted_sum(xs) / static_cast<double>(l);
  }
  std::vector<double> rc, rc2;
  for (const auto& p : mol.positions) {
    const double r = distance(p, centroid);
    rc.push_back(r);
    rc2.push_back(r * r);
  }
  terms[seg_q + 0].push_back(pd_mean);
  terms[seg_q + 1].push_back(pd_sd);
  terms[seg_q + 2].push_back(pair_d.empty() ? 0.0 : *std::max_element(pair_d.begin(), pair_d.end()));
  terms[seg_q + 3].push_back(bd_mean);
  terms[seg_q + 4].push_back(bd_sd);
  terms[seg_q + 5].push_back(l > 1 ? std::sqrt(sorted_sum(rc2) / static_cast<double>(l)) : 0.0);
  terms[seg_q + 6].push_back(l > 1 ? sorted_sum(rc) / static_cast<double>(l) : 0.0);

  // Charge segment: formal charges and an electronegativity-difference proxy.
  for (std::size_t i = 0; i < l; ++i) {
    const auto z = static_cast<std::uint64_t>(mol.atoms[i].z);
    double pull = 0.0;
    std::vector<double> diffs;
    for (const auto& [j, order] : nbr[i]) {
      diffs.push_back(static_cast<double>(order) *
                      (electronegativity(mol.atoms[j].z) - electronegativity(mol.atoms[i].z)));
    }
    pull = sorted_sum(diffs);
    hashed(seg_c, EDescriptorVector::kSegmentSizes[3], 4000 + z, 0, pull);
    if (mol.atoms[i].charge != 0) {
      hashed(seg_c, EDescriptorVector::kSegmentSizes[3], 5000 + z,
             static_cast<std::uint64_t>(mol.atoms[i].charge + 16), 1.0);
    }
  }

  std::vector<double> raw(M);
  for (std::size_t r = 0; r < M; ++r) raw[r] = sorted_sum(std::move(terms[r]));
  return EDescriptorVector(std::move(raw));
}

Molecule permute_atoms(const Molecule& mol, std::span<const std::size_t> perm) {
  const std::size_t l = mol.atom_count();
  if (perm.size() != l) throw ValidationError("permutation length does not match atom count");
  std::vector<std::size_t> inverse(l, l);
  for (std::size_t k = 0; k < l; ++k) {
    if (perm[k] >= l || inverse[perm[k]] != l) throw ValidationError("not a permutation");
    inverse[perm[k]] = k;
  }
  Molecule out;
  out.id = mol.id;
  out.labels = mol.labels;
  out.descriptors = mol.descriptors;
  for (std::size_t k = 0; k < l; ++k) {
    out.atoms.push_back(mol.atoms[perm[k]]);
    out.positions.push_back(mol.positions[perm[k]]);
  }
  for (const auto& b : mol.bonds) {
    const auto i = inverse[b.i], j = inverse[b.j];
    out.bonds.push_back({std::min(i, j), std::max(i, j), b.order});
  }
  std::sort(out.bonds.begin(), out.bonds.end(),
            [](const Bond& a, const Bond& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
  return out;
}

std::vector<std::size_t> canonical_order(const Molecule& mol) {
  const std::size_t l = mol.atom_count();
  const auto nbr = neighbor_lists(mol);

  using Key = std::vector<long long>;
  std::vector<Key> keys(l);
  for (std::size_t i = 0; i < l; ++i) {
    keys[i] = {mol.atoms[i].z, mol.atoms[i].charge, static_cast<long long>(nbr[i].size())};
    std::vector<long long> orders;
    for (const auto& [j, o] : nbr[i]) orders.push_back(o);
    std::sort(orders.begin(), orders.end());
    keys[i].insert(keys[i].end(), orders.begin(), orders.end());
  }
  auto colour = dense_rank(keys);
  std::size_t classes = *std::max_element(colour.begin(), colour.end()) + 1;
  for (std::size_t round = 0; round < l; ++round) {
    for (std::size_t i = 0; i < l; ++i) {
      std::vector<std::pair<std::size_t, int>> around;
      for (const auto& [j, o] : nbr[i]) around.emplace_back(colour[j], o);
      std::sort(around.begin(), around.end());
      keys[i] = {static_cast<long long>(colour[i])};
      for (const auto& [c, o] : around) {
        keys[i].push_back(static_cast<long long>(c));
        keys[i].push_back(o);
      }
    }
    colour = dense_rank(keys);
    const std::size_t next = *std::max_element(colour.begin(), colour.end()) + 1;
    if (next == classes) break;
    classes = next;
  }

  Vec3 centroid{};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> xs;
    for (const auto& p : mol.positions) xs.push_back(p[k]);
    centroid[k] = sorted_sum(xs) / static_cast<double>(l);
  }
  std::vector<double> radial(l), spread(l);
  for (std::size_t i = 0; i < l; ++i) {
    radial[i] = distance(mol.positions[i], centroid);
    std::vector<double> ds;
    for (std::size_t j = 0; j < l; ++j) {
      if (j != i) ds.push_back(distance(mol.positions[i], mol.positions[j]));
    }
    spread[i] = sorted_sum(std::move(ds));
  }

  std::vector<std::size_t> perm(l);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(colour[a], radial[a], spread[a], a) < std::tie(colour[b], radial[b], spread[b], b);
  });
  return perm;
}

Molecule canonicalize(const Molecule& mol) {
  const auto perm = canonical_order(mol);
  return permute_atoms(mol, perm);
}

}  // namespace molmamba
