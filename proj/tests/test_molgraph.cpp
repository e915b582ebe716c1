#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "molmamba/error.hpp"
#include "molmamba/molgraph.hpp"
#include "molmamba/rng.hpp"
#include "molmamba/synth.hpp"

using namespace molmamba;

namespace {

const char* kWater =
    R"({"id":"water","atoms":[{"z":8,"charge":0},{"z":1,"charge":0},{"z":1,"charge":0}],)"
    R"("pos":[[0,0,0],[0.96,0,0],[-0.24,0.93,0]],"bonds":[[0,1,1],[0,2,1]]})";

// Ethanol with explicit hydrogens: C C O H H H H H H
const char* kEthanol =
    R"({"id":"ethanol","atoms":[{"z":6,"charge":0},{"z":6,"charge":0},{"z":8,"charge":0},)"
    R"({"z":1,"charge":0},{"z":1,"charge":0},{"z":1,"charge":0},{"z":1,"charge":0},{"z":1,"charge":0},)"
    R"({"z":1,"charge":0}],"pos":[[-0.0011,-0.0372,0.0059],[1.5157,0.0196,0.0131],[1.9278,1.3636,0.0522],)"
    R"([-0.3855,1.0013,0.0341],[-0.3778,-0.5445,-0.8860],[-0.3717,-0.5854,0.8729],[1.8855,-0.5142,0.8972],)"
    R"([1.8958,-0.4856,-0.8854],[2.8860,1.3820,0.0500]],)"
    R"("bonds":[[0,1,1],[1,2,1],[0,3,1],[0,4,1],[0,5,1],[1,6,1],[1,7,1],[2,8,1]]})";

Molecule path3() {
  Molecule m;
  m.id = "path";
  m.atoms = {{6, 0}, {6, 0}, {8, 0}};
  m.positions = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  m.bonds = {{0, 1, 1}, {1, 2, 1}};
  return m;
}

std::vector<std::size_t> random_perm(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(p));
  return p;
}

TEST(ParseMolecule, MinimalWater) {
  const auto m = parse_molecule(kWater);
  EXPECT_EQ(m.id, "water");
  EXPECT_EQ(m.atom_count(), 3u);
  EXPECT_EQ(m.bond_count(), 2u);
  EXPECT_FALSE(m.descriptors.has_value());
}

TEST(ParseMolecule, BondOutOfRange) {
  const std::string rec = R"({"id":"x","atoms":[{"z":6,"charge":0},{"z":6,"charge":0},{"z":6,"charge":0}],)"
                          R"("pos":[[0,0,0],[1,0,0],[2,0,0]],"bonds":[[0,5,1]]})";
  EXPECT_THROW(parse_molecule(rec, 4), ValidationError);
}

TEST(ParseMolecule, DuplicateAndSelfBonds) {
  const std::string head = R"({"id":"x","atoms":[{"z":6,"charge":0},{"z":6,"charge":0}],"pos":[[0,0,0],[1,0,0]],)";
  EXPECT_THROW(parse_molecule(head + R"("bonds":[[0,1,1],[0,1,1]]})"), ValidationError);
  EXPECT_THROW(parse_molecule(head + R"("bonds":[[0,1,1],[1,0,1]]})"), ValidationError);
  EXPECT_THROW(parse_molecule(head + R"("bonds":[[1,1,1]]})"), ValidationError);
  EXPECT_THROW(parse_molecule(head + R"("bonds":[[0,1,7]]})"), ValidationError);
}

TEST(ParseMolecule, MalformedSyntaxReportsLine) {
  try {
    parse_molecule(R"({"id":"x","atoms":[)", 17);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 17u);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(ParseMolecule, UnknownKeyStrictVersusLenient) {
  const std::string rec = std::string(kWater).substr(0, std::string(kWater).size() - 1) + R"(,"smiles":"O"})";
  EXPECT_THROW(parse_molecule(rec), ValidationError);
  std::vector<std::string> warnings;
  const auto m = parse_molecule(rec, 1, ParseOptions{true}, &warnings);
  EXPECT_EQ(m.atom_count(), 3u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("smiles"), std::string::npos);
}

TEST(ParseMolecule, DescriptorLengthChecked) {
  std::string rec = std::string(kWater);
  rec.pop_back();
  EXPECT_THROW(parse_molecule(rec + R"(,"desc":[1,2,3]})"), ValidationError);
}

TEST(ParseMolecule, RoundTripIsExact) {
  auto mols = synth_data(20, 3);
  for (const auto& m : mols) {
    const auto text = serialize_molecule(m);
    const auto back = parse_molecule(text);
    EXPECT_EQ(serialize_molecule(back), text);
    EXPECT_EQ(back.positions, m.positions);
    EXPECT_EQ(back.labels, m.labels);
    ASSERT_TRUE(back.descriptors);
    EXPECT_TRUE(std::equal(back.descriptors->raw().begin(), back.descriptors->raw().end(),
                           m.descriptors->raw().begin()));
  }
}

TEST(ParseMolecule, FileRoundTrip) {
  const auto mols = synth_data(5, 4);
  const auto path = std::filesystem::temp_directory_path() / "molgraph_roundtrip.jsonl";
  write_molecules(path, mols);
  const auto back = read_molecules(path);
  ASSERT_EQ(back.size(), mols.size());
  for (std::size_t i = 0; i < mols.size(); ++i) EXPECT_EQ(serialize_molecule(back[i]), serialize_molecule(mols[i]));
  std::filesystem::remove(path);
}

TEST(GraphMatrices, PathGraph) {
  const auto g = graph_matrices(path3());
  const std::vector<std::uint8_t> want{0, 1, 0, 1, 0, 1, 0, 1, 0};
  EXPECT_EQ(g.adjacency, want);
  EXPECT_EQ(g.degrees, (std::vector<int>{1, 2, 1}));
  EXPECT_EQ(g.dist(0, 2), 2.0);
}

TEST(GraphMatrices, EthanolDistancesMatchScalarRecompute) {
  const auto m = parse_molecule(kEthanol);
  ASSERT_EQ(m.atom_count(), 9u);
  const auto g = graph_matrices(m);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(g.dist(i, i), 0.0);
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_EQ(g.dist(i, j), g.dist(j, i));
      const double dx = m.positions[i][0] - m.positions[j][0];
      const double dy = m.positions[i][1] - m.positions[j][1];
      const double dz = m.positions[i][2] - m.positions[j][2];
      EXPECT_NEAR(g.dist(i, j), std::sqrt(dx * dx + dy * dy + dz * dz), 1e-12);
    }
  }
  EXPECT_NEAR(g.dist(0, 1), 1.51788, 1e-5);
}

TEST(GraphMatrices, AdjacencyMatchesMembershipOracle) {
  for (const auto& m : synth_data(30, 9)) {
    const auto g = graph_matrices(m);
    for (std::size_t i = 0; i < m.atom_count(); ++i) {
      int deg = 0;
      for (std::size_t j = 0; j < m.atom_count(); ++j) {
        bool member = false;
        for (const auto& b : m.bonds) member |= (b.i == i && b.j == j) || (b.i == j && b.j == i);
        EXPECT_EQ(g.adjacent(i, j), member);
        deg += member;
      }
      EXPECT_EQ(g.degrees[i], deg);
    }
  }
}

TEST(GraphMatrices, PermutationEquivariant) {
  Rng rng(12);
  for (const auto& m : synth_data(20, 10)) {
    const auto perm = random_perm(m.atom_count(), rng);
    const auto g = graph_matrices(m);
    const auto h = graph_matrices(permute_atoms(m, perm));
    for (std::size_t a = 0; a < m.atom_count(); ++a)
      for (std::size_t b = 0; b < m.atom_count(); ++b) {
        EXPECT_EQ(h.adjacent(a, b), g.adjacent(perm[a], perm[b]));
        EXPECT_EQ(h.dist(a, b), g.dist(perm[a], perm[b]));
      }
  }
}

Molecule with_raw(Molecule m, std::vector<double> raw) {
  m.descriptors.emplace(std::move(raw));
  return m;
}

TEST(NormalizeDescriptors, ZeroVarianceAndTwoPoint) {
  std::vector<double> a(EDescriptorVector::kRows, 5.0), b(EDescriptorVector::kRows, 5.0);
  a[1] = 1.0;
  b[1] = 3.0;
  const auto out = normalize_descriptors({with_raw(path3(), a), with_raw(path3(), b)});
  EXPECT_EQ(out[0].descriptors->normalized(0), 0.0);
  EXPECT_EQ(out[1].descriptors->normalized(0), 0.0);
  EXPECT_DOUBLE_EQ(out[0].descriptors->normalized(1), -1.0);
  EXPECT_DOUBLE_EQ(out[1].descriptors->normalized(1), 1.0);
  EXPECT_EQ(out[0].descriptors->raw(1), 1.0);
}

TEST(NormalizeDescriptors, ClampedToTen) {
  std::vector<Molecule> corpus;
  for (int k = 0; k < 200; ++k) {
    std::vector<double> raw(EDescriptorVector::kRows, 0.0);
    raw[3] = k == 0 ? 1e6 : 0.0;
    corpus.push_back(with_raw(path3(), raw));
  }
  const auto out = normalize_descriptors(corpus);
  EXPECT_EQ(out[0].descriptors->normalized(3), 10.0);
}

TEST(NormalizeDescriptors, MomentsOnSyntheticCorpus) {
  const auto out = normalize_descriptors(synth_data(50, 21));
  for (std::size_t r = 0; r < EDescriptorVector::kRows; ++r) {
    double mean = 0.0, sq = 0.0;
    for (const auto& m : out) mean += m.descriptors->normalized(r);
    mean /= 50.0;
    for (const auto& m : out) sq += std::pow(m.descriptors->normalized(r) - mean, 2);
    const double sd = std::sqrt(sq / 50.0);
    EXPECT_LE(std::abs(mean), 1e-9) << "row " << r;
    if (sd != 0.0) EXPECT_NEAR(sd, 1.0, 1e-9) << "row " << r;
  }
}

TEST(NormalizeDescriptors, MissingRowsNameMolecule) {
  auto m = path3();
  m.id = "no-desc-here";
  try {
    normalize_descriptors({m});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no-desc-here"), std::string::npos);
  }
}

TEST(EDescriptorVector, SegmentLayout) {
  EXPECT_THROW(EDescriptorVector(std::vector<double>(111, 0.0)), ValidationError);
  EXPECT_EQ(EDescriptorVector::segment_of(24), 0u);
  EXPECT_EQ(EDescriptorVector::segment_of(25), 1u);
  EXPECT_EQ(EDescriptorVector::segment_of(79), 1u);
  EXPECT_EQ(EDescriptorVector::segment_of(80), 2u);
  EXPECT_EQ(EDescriptorVector::segment_of(87), 3u);
  EXPECT_EQ(EDescriptorVector::segment_of(111), 3u);
  EXPECT_EQ(EDescriptorVector::segment_begin(2), 80u);
}

TEST(SynthDescriptors, DeterministicAndSeeded) {
  const auto m = synth_data(1, 0)[0];
  EXPECT_EQ(synth_descriptors(m, 5), synth_descriptors(m, 5));
  EXPECT_FALSE(synth_descriptors(m, 5) == synth_descriptors(m, 6));
}

TEST(SynthDescriptors, SingleAtomHasZeroDistanceMoments) {
  Molecule m;
  m.id = "c";
  m.atoms = {{6, 0}};
  m.positions = {{1.0, 2.0, 3.0}};
  const auto d = synth_descriptors(m, 1);
  const auto q = EDescriptorVector::segment_begin(2);
  for (std::size_t r = q; r < q + 7; ++r) EXPECT_EQ(d.raw(r), 0.0);
}

TEST(SynthDescriptors, PermutationInvariant) {
  Rng rng(13);
  for (const auto& m : synth_data(20, 14)) {
    const auto p = permute_atoms(m, random_perm(m.atom_count(), rng));
    EXPECT_EQ(synth_descriptors(p, 3), synth_descriptors(m, 3));
  }
}

TEST(Canonicalize, IndependentOfInputNumbering) {
  Rng rng(15);
  for (const auto& m : synth_data(40, 16)) {
    const auto c = canonicalize(m);
    for (int k = 0; k < 5; ++k) {
      const auto d = canonicalize(permute_atoms(m, random_perm(m.atom_count(), rng)));
      ASSERT_EQ(serialize_molecule(d), serialize_molecule(c)) << m.id;
    }
  }
}

TEST(Validate, RejectsBadMolecules) {
  Molecule m = path3();
  m.positions.pop_back();
  EXPECT_THROW(validate(m), ValidationError);
  Molecule e;
  e.id = "empty";
  EXPECT_THROW(validate(e), ValidationError);
}

}  // namespace
