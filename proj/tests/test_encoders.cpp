#include <gtest/gtest.h>

#include <numeric>

#include "molmamba/encoders.hpp"
#include "molmamba/error.hpp"
#include "molmamba/synth.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace molmamba;
using oracle::Row;
using oracle::Rows;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 6;
  cfg.gnn_f_layers = 2;
  cfg.gnn_a_layers = 2;
  cfg.rbf_count = 5;
  cfg.rbf_cutoff = 4.0;
  return cfg;
}

Rows gin_oracle(const ParamStore& s, const FragmentGraph& g, const std::vector<std::size_t>& ids, std::size_t layers) {
  Rows x;
  for (auto id : ids) x.push_back(oracle::layernorm(s, "gnn_f.norm", oracle::embed(s, "gnn_f.embed", id)));
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string name = "gnn_f.layers." + std::to_string(k);
    const double eps = oracle::values(s, name + ".eps")[0];
    Rows next;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Row agg(x[i].size());
      for (std::size_t c = 0; c < agg.size(); ++c) agg[c] = (1.0 + eps) * x[i][c];
      for (const auto& [a, b] : g.edges) {
        if (a != i && b != i) continue;
        const auto& other = x[a == i ? b : a];
        for (std::size_t c = 0; c < agg.size(); ++c) agg[c] += other[c];
      }
      next.push_back(oracle::mlp(s, name + ".mlp", agg));
    }
    x = std::move(next);
  }
  return x;
}

void perturb_eps(ParamStore& s, std::size_t layers) {
  for (std::size_t k = 0; k < layers; ++k) s.values(s.index("gnn_f.layers." + std::to_string(k) + ".eps"))[0] = 0.3 * (k + 1);
}

TEST(FragmentEncoder, SingleFragmentIsMlpStack) {
  ParamStore s;
  Rng rng(1);
  const auto cfg = small_config();
  const auto enc = FragmentEncoder::create(s, rng, 5, cfg);
  perturb_eps(s, cfg.gnn_f_layers);
  const FragmentGraph g{1, {}};
  const std::vector<std::size_t> ids{3};
  const auto y = enc.forward(Binding(s), g, ids);
  ASSERT_EQ(y.shape(), (Shape{1, 6}));
  EXPECT_LE(oracle::max_abs_diff(gin_oracle(s, g, ids, cfg.gnn_f_layers), {y.data().begin(), y.data().end()}), 1e-12);
}

TEST(FragmentEncoder, TwoNodeAndStarGraphs) {
  ParamStore s;
  Rng rng(2);
  const auto cfg = small_config();
  const auto enc = FragmentEncoder::create(s, rng, 5, cfg);
  perturb_eps(s, cfg.gnn_f_layers);
  for (const auto& [g, ids] : std::vector<std::pair<FragmentGraph, std::vector<std::size_t>>>{
           {{2, {{0, 1}}}, {0, 4}},
           {{4, {{0, 1}, {0, 2}, {0, 3}}}, {1, 1, 2, 3}},
       }) {
    const auto y = enc.forward(Binding(s), g, ids);
    EXPECT_LE(oracle::max_abs_diff(gin_oracle(s, g, ids, cfg.gnn_f_layers), {y.data().begin(), y.data().end()}),
              1e-12);
  }
}

TEST(FragmentEncoder, PermutationEquivariant) {
  ParamStore s;
  Rng rng(3);
  const auto cfg = small_config();
  const auto enc = FragmentEncoder::create(s, rng, 6, cfg);
  const FragmentGraph g{5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}}};
  const std::vector<std::size_t> ids{0, 5, 2, 2, 1};
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};  // new node k is old node perm[k]
  std::vector<std::size_t> inverse(5);
  for (std::size_t k = 0; k < 5; ++k) inverse[perm[k]] = k;
  FragmentGraph pg{5, {}};
  for (auto [a, b] : g.edges) pg.edges.emplace_back(std::min(inverse[a], inverse[b]), std::max(inverse[a], inverse[b]));
  std::vector<std::size_t> pids(5);
  for (std::size_t k = 0; k < 5; ++k) pids[k] = ids[perm[k]];
  const auto y = enc.forward(Binding(s), g, ids);
  const auto py = enc.forward(Binding(s), pg, pids);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_NEAR(py.at(k, c), y.at(perm[k], c), 1e-12);
}

TEST(FragmentEncoder, RejectsUnknownId) {
  ParamStore s;
  Rng rng(4);
  const auto enc = FragmentEncoder::create(s, rng, 3, small_config());
  const std::vector<std::size_t> ids{3};
  EXPECT_THROW(enc.forward(Binding(s), FragmentGraph{1, {}}, ids), ValidationError);
}

TEST(RadialBasis, PeaksAtCentres) {
  const std::size_t n = 9;
  const double cutoff = 4.0, spacing = cutoff / (n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = radial_basis(spacing * k, n, cutoff);
    EXPECT_DOUBLE_EQ(r[k], 1.0);
    EXPECT_EQ(std::max_element(r.begin(), r.end()) - r.begin(), static_cast<std::ptrdiff_t>(k));
    if (k + 1 < n) EXPECT_NEAR(r[k + 1], std::exp(-1.0), 1e-15);
  }
}

Rows atom_oracle(const ParamStore& s, const Molecule& m, const ModelConfig& cfg) {
  const auto g = graph_matrices(m);
  const std::size_t l = m.atom_count();
  Rows h;
  for (const auto& a : m.atoms) h.push_back(oracle::layernorm(s, "gnn_a.norm", oracle::embed(s, "gnn_a.embed", a.z)));
  for (std::size_t k = 0; k < cfg.gnn_a_layers; ++k) {
    const std::string name = "gnn_a.layers." + std::to_string(k);
    Rows next = h;
    for (std::size_t i = 0; i < l; ++i) {
      Row msg(cfg.d_model, 0.0);
      for (std::size_t j = 0; j < l; ++j) {
        if (!g.adjacent(i, j)) continue;
        const auto w = oracle::mlp(s, name + ".filter", radial_basis(g.dist(i, j), cfg.rbf_count, cfg.rbf_cutoff));
        for (std::size_t c = 0; c < msg.size(); ++c) msg[c] += h[j][c] * w[c];
      }
      const auto u = oracle::mlp(s, name + ".update", msg);
      for (std::size_t c = 0; c < msg.size(); ++c) next[i][c] += u[c];
    }
    h = std::move(next);
  }
  return h;
}

TEST(AtomEncoder, MatchesScalarOracle) {
  ParamStore s;
  Rng rng(5);
  const auto cfg = small_config();
  const auto enc = AtomEncoder::create(s, rng, cfg);
  for (const auto& m : synth_data(6, 9)) {
    const auto y = enc.forward(Binding(s), m, graph_matrices(m));
    ASSERT_EQ(y.shape(), (Shape{m.atom_count(), cfg.d_model}));
    EXPECT_LE(oracle::max_abs_diff(atom_oracle(s, m, cfg), {y.data().begin(), y.data().end()}), 1e-12);
  }
}

TEST(AtomEncoder, IsolatedAtomSeesNoMessages) {
  ParamStore s;
  Rng rng(6);
  const auto cfg = small_config();
  const auto enc = AtomEncoder::create(s, rng, cfg);
  Molecule m;
  m.atoms = {{8, 0}};
  m.positions = {{0, 0, 0}};
  const auto y = enc.forward(Binding(s), m, graph_matrices(m));
  Row h = oracle::layernorm(s, "gnn_a.norm", oracle::embed(s, "gnn_a.embed", 8));
  for (std::size_t k = 0; k < cfg.gnn_a_layers; ++k) {
    const auto u = oracle::mlp(s, "gnn_a.layers." + std::to_string(k) + ".update", Row(cfg.d_model, 0.0));
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += u[c];
  }
  EXPECT_LE(oracle::max_abs_diff({h}, {y.data().begin(), y.data().end()}), 1e-12);
}

TEST(AtomEncoder, PermutationEquivariant) {
  ParamStore s;
  Rng rng(7);
  const auto cfg = small_config();
  const auto enc = AtomEncoder::create(s, rng, cfg);
  const auto m = synth_data(1, 12)[0];
  std::vector<std::size_t> perm(m.atom_count());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  const auto p = permute_atoms(m, perm);
  const auto y = enc.forward(Binding(s), m, graph_matrices(m));
  const auto py = enc.forward(Binding(s), p, graph_matrices(p));
  for (std::size_t k = 0; k < perm.size(); ++k)
    for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_NEAR(py.at(k, c), y.at(perm[k], c), 1e-12);
}

TEST(DescriptorEncoder, InputRowLayout) {
  std::vector<double> raw(112);
  for (std::size_t r = 0; r < 112; ++r) raw[r] = static_cast<double>(r) - 50.0;
  const EDescriptorVector d(raw, std::vector<double>(112, 0.25));
  std::vector<bool> mask(112, false);
  mask[30] = true;
  const auto x = DescriptorEncoder::input_rows(d, mask);
  ASSERT_EQ(x.shape(), (Shape{112, 7}));
  EXPECT_NEAR(x.at(0, 0), -std::log1p(50.0), 1e-15);
  EXPECT_NEAR(x.at(60, 0), std::log1p(10.0), 1e-15);
  EXPECT_EQ(x.at(0, 1), 0.25);
  EXPECT_EQ(x.at(30, 0), 0.0);
  EXPECT_EQ(x.at(30, 1), 0.0);
  EXPECT_EQ(x.at(30, 2), 1.0);
  EXPECT_EQ(x.at(29, 2), 0.0);
  const std::vector<std::pair<std::size_t, std::size_t>> boundaries{{0, 0},  {24, 0}, {25, 1}, {79, 1},
                                                                    {80, 2}, {86, 2}, {87, 3}, {111, 3}};
  for (auto [row, seg] : boundaries) {
    EXPECT_EQ(EDescriptorVector::segment_of(row), seg);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(x.at(row, 3 + k), k == seg ? 1.0 : 0.0) << row;
  }
}

TEST(DescriptorEncoder, MaskedTokensIgnoreValues) {
  ParamStore s;
  Rng rng(8);
  const auto enc = DescriptorEncoder::create(s, rng, small_config());
  const auto mols = normalize_descriptors(synth_data(2, 13));
  std::vector<bool> mask(112, false);
  for (std::size_t r : {3, 40, 81, 100}) mask[r] = true;
  const auto a = enc.forward(Binding(s), *mols[0].descriptors, mask);
  const auto b = enc.forward(Binding(s), *mols[1].descriptors, mask);
  for (std::size_t r = 0; r < 112; ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(a.at(r, c), b.at(r, c));
  }
  // unmasked tokens are the plain per-row MLP
  const auto plain = enc.forward(Binding(s), *mols[0].descriptors);
  for (std::size_t r = 0; r < 112; ++r) {
    const auto& d = *mols[0].descriptors;
    Row in(7, 0.0);
    in[0] = std::copysign(std::log1p(std::abs(d.raw(r))), d.raw(r));
    in[1] = d.normalized(r);
    in[3 + EDescriptorVector::segment_of(r)] = 1.0;
    const auto want = oracle::mlp(s, "e_encoder.mlp", in);
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(plain.at(r, c), want[c], 1e-12);
      if (!mask[r]) EXPECT_EQ(plain.at(r, c), a.at(r, c));
    }
  }
}

TEST(DescriptorEncoder, TokenNormsBoundedOnCorpus) {
  ParamStore s;
  Rng rng(9);
  const auto enc = DescriptorEncoder::create(s, rng, ModelConfig{});
  for (const auto& m : normalize_descriptors(synth_data(50, 14))) {
    const auto y = enc.forward(Binding(s), *m.descriptors);
    for (std::size_t r = 0; r < 112; ++r) {
      double n2 = 0.0;
      for (std::size_t c = 0; c < y.dim(1); ++c) n2 += y.at(r, c) * y.at(r, c);
      EXPECT_LE(std::sqrt(n2), 1e3);
    }
  }
}

TEST(DescriptorEncoder, RejectsWrongMaskLength) {
  const EDescriptorVector d(std::vector<double>(112, 1.0));
  EXPECT_THROW(DescriptorEncoder::input_rows(d, std::vector<bool>(10, false)), ValidationError);
}

TEST(EncoderGradients, AllParametersMatchFiniteDifferences) {
  using testing_support::each_param;
  using testing_support::gradcheck_params;
  const auto cfg = small_config();
  const auto m = normalize_descriptors(synth_data(1, 15))[0];
  const auto g = graph_matrices(m);
  ParamStore s;
  Rng rng(10);
  const auto fe = FragmentEncoder::create(s, rng, 4, cfg);
  const auto ae = AtomEncoder::create(s, rng, cfg);
  const auto de = DescriptorEncoder::create(s, rng, cfg);
  perturb_eps(s, cfg.gnn_f_layers);
  const FragmentGraph fg{3, {{0, 1}, {1, 2}}};
  const std::vector<std::size_t> ids{0, 3, 1};
  std::vector<bool> mask(112, false);
  mask[7] = true;
  Rng wr(11);
  const auto w_f = testing_support::random_values(wr, 3 * 6);
  const auto w_a = testing_support::random_values(wr, m.atom_count() * 6);
  const auto w_d = testing_support::random_values(wr, 112 * 6);
  auto f = [&](const Binding& p) {
    return ops::add(ops::add(testing_support::project(fe.forward(p, fg, ids), w_f),
                             testing_support::project(ae.forward(p, m, g), w_a)),
                    testing_support::project(de.forward(p, *m.descriptors, mask), w_d));
  };
  // the element embedding is sparse; probe the rows actually used
  auto probes = each_param(s, 12);
  const auto emb = s.index("gnn_a.embed");
  for (auto& pr : probes)
    if (pr.param == emb) pr.element = static_cast<std::size_t>(m.atoms[0].z) * 6 + 2;
  EXPECT_LE(gradcheck_params(s, f, probes), 1e-6);
}

}  // namespace
