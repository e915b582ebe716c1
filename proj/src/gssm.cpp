#include "molmamba/gssm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "molmamba/error.hpp"

namespace molmamba {

std::vector<double> graph_gate(const GraphMatrices& matrices, const NodeOrdering& ordering) {
  const std::size_t l = ordering.perm.size();
  std::vector<double> gate(l, 0.0);
  for (std::size_t t = 0; t < l; ++t) {
    const auto i = ordering.perm[t];
    double s = 0.0;
    std::size_t n = 0;
    // Neighbours visited in sorted-slot order, matching the re-indexed matrices.
    for (std::size_t u = 0; u < l; ++u) {
      const auto j = ordering.perm[u];
      if (!matrices.adjacent(i, j)) continue;
      s += std::exp(-matrices.dist(i, j));
      ++n;
    }
    gate[t] = n ? s / static_cast<double>(n) : 0.0;
  }
  return gate;
}

Tensor graph_modulation(const Tensor& delta, std::span<const double> gate) {
  std::vector<double> scale(gate.size());
  for (std::size_t t = 0; t < gate.size(); ++t) scale[t] = 1.0 + gate[t];
  return ops::scale_rows(delta, Tensor::constant({gate.size()}, std::move(scale)));
}

MambaMixer MambaMixer::create(ParamStore& store, Rng& rng, const std::string& name, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, dh = cfg.d_inner, n = cfg.d_state, k = cfg.conv_kernel;
  MambaMixer m;
  m.in_x = Linear::create(store, rng, name + ".in_x", d, dh);
  m.in_z = Linear::create(store, rng, name + ".in_z", d, dh);
  m.conv_weight = store.add(name + ".conv.w", {dh, k}, init_fan_in_uniform(rng, k, dh * k));
  m.conv_bias = store.add(name + ".conv.b", {dh}, init_constant(dh, 0.0));
  m.to_b = Linear::create(store, rng, name + ".b_proj", dh, n);
  m.to_c = Linear::create(store, rng, name + ".c_proj", dh, n);
  m.to_delta = Linear::create(store, rng, name + ".delta_proj", dh, dh);
  // softplus(-2.25) ~ 0.1: a modest initial step size
  std::fill(store.values(m.to_delta.bias).begin(), store.values(m.to_delta.bias).end(), -2.25);
  std::vector<double> a_log(dh * n);
  for (std::size_t c = 0; c < dh; ++c)
    for (std::size_t s = 0; s < n; ++s) a_log[c * n + s] = std::log(static_cast<double>(s + 1));
  m.a_log = store.add(name + ".a_log", {dh, n}, std::move(a_log));
  m.out = Linear::create(store, rng, name + ".out_proj", dh, d);
  return m;
}

Tensor MambaMixer::scan_only(const Binding& p, const Tensor& u, std::span<const double> gate) const {
  const auto x = ops::silu(ops::conv1d_causal(in_x(p, u), p(conv_weight), p(conv_bias)));
  const auto b = to_b(p, x);
  const auto c = to_c(p, x);
  auto delta = ops::softplus(to_delta(p, x));
  if (!gate.empty()) delta = graph_modulation(delta, gate);
  const auto a = ops::scale(ops::exp(p(a_log)), -1.0);
  return ops::selective_scan(x, delta, a, b, c);
}

Tensor MambaMixer::operator()(const Binding& p, const Tensor& u, std::span<const double> gate) const {
  const auto y = scan_only(p, u, gate);
  return out(p, ops::mul(y, ops::silu(in_z(p, u))));
}

std::vector<double> MambaMixer::state_matrix(const ParamStore& store) const {
  auto v = std::vector<double>(store.values(a_log).begin(), store.values(a_log).end());
  for (auto& x : v) x = -std::exp(x);
  return v;
}

PositionalTables PositionalTables::create(ParamStore& store, Rng& rng, const ModelConfig& cfg) {
  return {Embedding::create(store, rng, "mg.pe.fragment", cfg.pf_table, cfg.pf_width),
          Embedding::create(store, rng, "mg.pe.rank", cfg.pd_table, cfg.pd_width),
          Linear::create(store, rng, "mg.pe.project", cfg.d_model + cfg.pf_width + cfg.pd_width, cfg.d_model)};
}

Tensor assemble_sequence(const Binding& p, const Tensor& atom_features, const NodeOrdering& ordering,
                         const PositionalTables& tables, bool use_pe) {
  const std::size_t l = ordering.perm.size();
  for (std::size_t t = 0; t < l; ++t) {
    if (ordering.frag_pos[t] >= tables.fragment.rows) {
      throw ValidationError("fragment ordinal " + std::to_string(ordering.frag_pos[t]) +
                            " exceeds the positional table size " + std::to_string(tables.fragment.rows));
    }
    if (ordering.intra_pos[t] >= tables.rank.rows) {
      throw ValidationError("intra-fragment rank " + std::to_string(ordering.intra_pos[t]) +
                            " exceeds the positional table size " + std::to_string(tables.rank.rows));
    }
  }
  const auto sorted = ops::gather_rows(atom_features, ordering.perm);
  Tensor pf, pd;
  if (use_pe) {
    pf = tables.fragment(p, ordering.frag_pos);
    pd = tables.rank(p, ordering.intra_pos);
  } else {
    pf = Tensor::zeros({l, tables.fragment.width});
    pd = Tensor::zeros({l, tables.rank.width});
  }
  const Tensor parts[] = {sorted, pf, pd};
  return tables.project(p, ops::concat(parts, 1));
}

Tensor frag_pool(const Tensor& y, const NodeOrdering& ordering, std::size_t fragments) {
  return ops::segment_max(y, ordering.frag_pos, fragments);
}

std::vector<std::size_t> trunk_path(const FragmentGraph& graph) {
  const std::size_t h = graph.nodes;
  if (h == 0) return {};
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> adj(h);
  for (const auto& [i, j] : graph.edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  std::vector<std::vector<std::size_t>> dist(h, std::vector<std::size_t>(h, kInf));
  for (std::size_t s = 0; s < h; ++s) {
    std::queue<std::size_t> q;
    dist[s][s] = 0;
    q.push(s);
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (auto v : adj[u]) {
        if (dist[s][v] == kInf) {
          dist[s][v] = dist[s][u] + 1;
          q.push(v);
        }
      }
    }
  }
  std::size_t diameter = 0;
  for (std::size_t s = 0; s < h; ++s)
    for (std::size_t t = 0; t < h; ++t)
      if (dist[s][t] != kInf) diameter = std::max(diameter, dist[s][t]);

  std::vector<std::size_t> best;
  for (std::size_t s = 0; s < h; ++s)
    for (std::size_t t = 0; t < h; ++t) {
      if (dist[s][t] != diameter) continue;
      // smallest next hop that stays on a shortest path gives the lexicographic minimum
      std::vector<std::size_t> path{s};
      for (std::size_t u = s; u != t;) {
        for (auto v : adj[u]) {
          if (dist[v][t] + 1 == dist[u][t]) {
            u = v;
            break;
          }
        }
        path.push_back(u);
      }
      if (best.empty() || path < best) best = std::move(path);
    }
  return best;
}

StructureTargets structure_targets(const FragmentGraph& graph, const Fragmentation& frag, std::size_t vocab_size) {
  StructureTargets t{std::vector<double>(vocab_size, 0.0), std::vector<double>(vocab_size, 0.0)};
  for (auto id : frag.vocab_ids) t.fragments.at(id) = 1.0;
  for (auto f : trunk_path(graph)) t.trunk.at(frag.vocab_ids[f]) = 1.0;
  return t;
}

MambaGraph MambaGraph::create(ParamStore& store, Rng& rng, std::size_t vocab_size, const ModelConfig& cfg) {
  MambaGraph mg;
  mg.tables = PositionalTables::create(store, rng, cfg);
  for (std::size_t k = 0; k < cfg.mamba_layers; ++k) {
    mg.blocks.push_back(MambaBlock::create(store, rng, "mg.mamba." + std::to_string(k), cfg));
  }
  mg.trunk_head = Linear::create(store, rng, "mg.trunk_head", cfg.d_model, vocab_size);
  mg.fragment_head = Linear::create(store, rng, "mg.fragment_head", cfg.d_model, vocab_size);
  return mg;
}

MGOutput MambaGraph::forward(const Binding& p, const Tensor& atom_features, const GraphMatrices& matrices,
                             const NodeOrdering& ordering, std::size_t fragments, const ModelConfig& cfg) const {
  std::vector<double> gate;
  if (cfg.use_gssm) gate = graph_gate(matrices, ordering);
  Tensor y = assemble_sequence(p, atom_features, ordering, tables, cfg.use_pe);
  for (const auto& block : blocks) y = block(p, y, gate);
  MGOutput out;
  out.sequence = y;
  out.pooled = frag_pool(y, ordering, fragments);
  const auto mean = ops::mean_rows(y);
  out.trunk_logits = trunk_head(p, mean);
  out.fragment_logits = fragment_head(p, mean);
  return out;
}

}  // namespace molmamba
