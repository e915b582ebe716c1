#include "molmamba/fragmenter.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "molmamba/error.hpp"

namespace molmamba {

namespace {

using Edge = std::tuple<std::size_t, std::size_t, int>;
using Adjacency = std::vector<std::vector<std::pair<std::size_t, int>>>;

Adjacency adjacency_of(const Molecule& mol) {
  Adjacency adj(mol.atom_count());
  for (const auto& b : mol.bonds) {
    adj[b.i].emplace_back(b.j, b.order);
    adj[b.j].emplace_back(b.i, b.order);
  }
  return adj;
}

// Exact canonical form by exhaustive search over numberings that respect a
// one-round colour refinement of (element, degree).
std::string canonical_form(const std::vector<int>& z, const std::vector<Edge>& edges) {
  const std::size_t n = z.size();
  std::vector<int> deg(n, 0);
  std::vector<std::vector<std::pair<std::size_t, int>>> nb(n);
  for (const auto& [a, b, o] : edges) {
    ++deg[a];
    ++deg[b];
    nb[a].emplace_back(b, o);
    nb[b].emplace_back(a, o);
  }
  using Key = std::vector<int>;
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::tuple<int, int, int>> around;
    for (const auto& [j, o] : nb[i]) around.emplace_back(z[j], deg[j], o);
    std::sort(around.begin(), around.end());
    keys[i] = {z[i], deg[i]};
    for (const auto& [zz, dd, oo] : around) keys[i].insert(keys[i].end(), {zz, dd, oo});
  }
  std::vector<std::size_t> nodes(n);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::sort(nodes.begin(), nodes.end(), [&](std::size_t a, std::size_t b) { return std::tie(keys[a], a) < std::tie(keys[b], b); });
  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0 || keys[nodes[k]] != keys[nodes[k - 1]]) classes.emplace_back();
    classes.back().push_back(nodes[k]);
  }

  std::ostringstream head;
  for (std::size_t k = 0; k < n; ++k) head << (k ? "." : "") << z[nodes[k]] << ':' << deg[nodes[k]];

  std::vector<Edge> best;
  bool have_best = false;
  std::vector<std::size_t> position(n);
  std::vector<Edge> code;
  auto evaluate = [&]() {
    code.clear();
    for (const auto& [a, b, o] : edges) {
      const auto pa = position[a], pb = position[b];
      code.emplace_back(std::min(pa, pb), std::max(pa, pb), o);
    }
    std::sort(code.begin(), code.end());
    if (!have_best || code < best) {
      best = code;
      have_best = true;
    }
  };
  // Recurse over classes, permuting members inside each class.
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t ci, std::size_t offset) {
    if (ci == classes.size()) {
      evaluate();
      return;
    }
    auto members = classes[ci];
    std::sort(members.begin(), members.end());
    do {
      for (std::size_t k = 0; k < members.size(); ++k) position[members[k]] = offset + k;
      walk(ci + 1, offset + members.size());
    } while (std::next_permutation(members.begin(), members.end()));
  };
  walk(0, 0);

  std::ostringstream os;
  os << head.str() << '|';
  for (std::size_t k = 0; k < best.size(); ++k) {
    const auto& [a, b, o] = best[k];
    os << (k ? "," : "") << a << '-' << b << ':' << o;
  }
  return os.str();
}

class SignatureCache {
 public:
  std::string get(const Molecule& mol, const Adjacency& adj, std::span<const std::size_t> atoms) {
    std::vector<std::size_t> sorted(atoms.begin(), atoms.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> z;
    std::vector<Edge> edges;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      z.push_back(mol.atoms[sorted[k]].z);
      for (const auto& [j, o] : adj[sorted[k]]) {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), j);
        if (it == sorted.end() || *it != j) continue;
        const auto local = static_cast<std::size_t>(it - sorted.begin());
        if (local > k) edges.emplace_back(k, local, o);
      }
    }
    std::ostringstream raw;
    for (int x : z) raw << x << ' ';
    raw << '|';
    for (const auto& [a, b, o] : edges) raw << a << '-' << b << ':' << o << ' ';
    const std::string key = raw.str();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto sig = canonical_form(z, edges);
    cache_.emplace(key, sig);
    return sig;
  }

 private:
  std::unordered_map<std::string, std::string> cache_;
};

// Working fragmentation of one molecule during mining / replay.
struct FragState {
  std::vector<std::size_t> frag_of;
  std::vector<std::vector<std::size_t>> members;  // ordered by minimum atom
  std::vector<std::string> signature;

  static FragState singletons(const Molecule& mol) {
    FragState s;
    const std::size_t l = mol.atom_count();
    s.frag_of.resize(l);
    for (std::size_t i = 0; i < l; ++i) {
      s.frag_of[i] = i;
      s.members.push_back({i});
      s.signature.push_back(singleton_signature(mol.atoms[i].z));
    }
    return s;
  }

  std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(const Molecule& mol) const {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& b : mol.bonds) {
      const auto fa = frag_of[b.i], fb = frag_of[b.j];
      if (fa != fb) pairs.emplace(std::min(fa, fb), std::max(fa, fb));
    }
    return {pairs.begin(), pairs.end()};
  }

  std::vector<std::size_t> merged_atoms(std::size_t a, std::size_t b) const {
    std::vector<std::size_t> out;
    std::merge(members[a].begin(), members[a].end(), members[b].begin(), members[b].end(), std::back_inserter(out));
    return out;
  }

  /// Applies merges (pairs must be disjoint) and renumbers by minimum atom.
  void apply(const std::vector<std::pair<std::size_t, std::size_t>>& merges, const std::string& sig) {
    if (merges.empty()) return;
    std::vector<std::vector<std::size_t>> next_members;
    std::vector<std::string> next_sig;
    std::vector<bool> gone(members.size(), false);
    for (const auto& [a, b] : merges) {
      next_members.push_back(merged_atoms(a, b));
      next_sig.push_back(sig);
      gone[a] = gone[b] = true;
    }
    for (std::size_t f = 0; f < members.size(); ++f) {
      if (gone[f]) continue;
      next_members.push_back(std::move(members[f]));
      next_sig.push_back(std::move(signature[f]));
    }
    std::vector<std::size_t> order(next_members.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return next_members[x].front() < next_members[y].front(); });
    members.clear();
    signature.clear();
    for (auto o : order) {
      members.push_back(std::move(next_members[o]));
      signature.push_back(std::move(next_sig[o]));
    }
    for (std::size_t f = 0; f < members.size(); ++f)
      for (auto a : members[f]) frag_of[a] = f;
  }
};

// Disjoint occurrences of `sig` among adjacent pairs, greedy in pair order.
std::vector<std::pair<std::size_t, std::size_t>> occurrences(const Molecule& mol, const Adjacency& adj,
                                                             const FragState& st, const std::string& sig,
                                                             std::size_t sig_atoms, SignatureCache& cache) {
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  std::vector<bool> used(st.members.size(), false);
  for (const auto& [a, b] : st.adjacent_pairs(mol)) {
    if (used[a] || used[b]) continue;
    if (st.members[a].size() + st.members[b].size() != sig_atoms) continue;
    const auto atoms = st.merged_atoms(a, b);
    if (cache.get(mol, adj, atoms) != sig) continue;
    used[a] = used[b] = true;
    picked.emplace_back(a, b);
  }
  return picked;
}

std::size_t signature_atoms(const std::string& sig) {
  const auto bar = sig.find('|');
  return static_cast<std::size_t>(std::count(sig.begin(), sig.begin() + static_cast<std::ptrdiff_t>(bar), '.')) + 1;
}

}  // namespace

FragmentVocab::FragmentVocab(std::vector<VocabEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != i) throw ValidationError("vocabulary ids must be dense 0..size-1");
    if (!by_pattern_.emplace(entries_[i].pattern, i).second) {
      throw ValidationError("duplicate vocabulary pattern " + entries_[i].pattern);
    }
  }
}

std::optional<std::size_t> FragmentVocab::find(const std::string& pattern) const {
  auto it = by_pattern_.find(pattern);
  if (it == by_pattern_.end()) return std::nullopt;
  return it->second;
}

std::string singleton_signature(int z) { return std::to_string(z) + ":0|"; }

std::string pattern_signature(const Molecule& mol, std::span<const std::size_t> atoms) {
  SignatureCache cache;
  return cache.get(mol, adjacency_of(mol), atoms);
}

FragmentVocab build_vocabulary(std::span<const Molecule> corpus, std::size_t target_size) {
  if (corpus.empty()) throw ValidationError("build_vocabulary: empty corpus");
  std::set<int> elements;
  for (const auto& m : corpus)
    for (const auto& a : m.atoms) elements.insert(a.z);
  if (target_size < elements.size()) {
    throw ValidationError("build_vocabulary: target size " + std::to_string(target_size) + " is below the " +
                          std::to_string(elements.size()) + " element types in the corpus");
  }

  std::vector<VocabEntry> entries;
  std::map<int, std::size_t> element_count;
  for (const auto& m : corpus)
    for (const auto& a : m.atoms) ++element_count[a.z];
  for (const auto& [z, count] : element_count) entries.push_back({entries.size(), singleton_signature(z), count});

  std::vector<Adjacency> adj;
  std::vector<FragState> states;
  for (const auto& m : corpus) {
    adj.push_back(adjacency_of(m));
    states.push_back(FragState::singletons(m));
  }
  SignatureCache cache;
  std::set<std::string> known;
  for (const auto& e : entries) known.insert(e.pattern);

  while (entries.size() < target_size) {
    std::map<std::string, std::size_t> freq;
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      const auto& st = states[k];
      std::map<std::string, std::vector<bool>> used;
      for (const auto& [a, b] : st.adjacent_pairs(corpus[k])) {
        if (st.members[a].size() + st.members[b].size() > FragmentVocab::kMaxPatternAtoms) continue;
        const auto sig = cache.get(corpus[k], adj[k], st.merged_atoms(a, b));
        auto& u = used[sig];
        if (u.empty()) u.assign(st.members.size(), false);
        if (u[a] || u[b]) continue;
        u[a] = u[b] = true;
        ++freq[sig];
      }
    }
    // map iteration is lexicographic, so strict > keeps the smallest signature on ties
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [sig, count] : freq) {
      if (count > best_count && !known.count(sig)) {
        best = &sig;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const std::string sig = *best;
    const std::size_t sig_atoms = signature_atoms(sig);
    entries.push_back({entries.size(), sig, best_count});
    known.insert(sig);
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      states[k].apply(occurrences(corpus[k], adj[k], states[k], sig, sig_atoms, cache), sig);
    }
  }
  return FragmentVocab(std::move(entries));
}

Fragmentation fragment_molecule(const Molecule& mol, const FragmentVocab& vocab) {
  for (const auto& a : mol.atoms) {
    if (!vocab.find(singleton_signature(a.z))) {
      throw ValidationError("element " + element_symbol(a.z) + " (Z=" + std::to_string(a.z) +
                            ") is not covered by the fragment vocabulary");
    }
  }
  const auto adj = adjacency_of(mol);
  auto st = FragState::singletons(mol);
  SignatureCache cache;
  for (const auto& e : vocab.entries()) {
    const std::size_t atoms = signature_atoms(e.pattern);
    if (atoms < 2 || atoms > mol.atom_count()) continue;
    st.apply(occurrences(mol, adj, st, e.pattern, atoms, cache), e.pattern);
  }
  Fragmentation frag;
  frag.assignment = st.frag_of;
  for (const auto& sig : st.signature) frag.vocab_ids.push_back(*vocab.find(sig));
  return frag;
}

FragmentGraph fragment_graph(const Molecule& mol, const Fragmentation& frag) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (const auto& b : mol.bonds) {
    const auto fa = frag.assignment[b.i], fb = frag.assignment[b.j];
    if (fa != fb) edges.emplace(std::min(fa, fb), std::max(fa, fb));
  }
  return {frag.count(), {edges.begin(), edges.end()}};
}

NodeOrdering sort_nodes(const Molecule& mol, const Fragmentation& frag) {
  const std::size_t l = mol.atom_count();
  std::vector<int> degree(l, 0);
  for (const auto& b : mol.bonds) {
    ++degree[b.i];
    ++degree[b.j];
  }
  std::vector<std::size_t> perm(l);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    const auto fa = frag.assignment[a], fb = frag.assignment[b];
    if (fa != fb) return fa < fb;
    if (degree[a] != degree[b]) return degree[a] > degree[b];
    return a < b;
  });
  NodeOrdering out;
  out.perm = perm;
  out.frag_pos.resize(l);
  out.intra_pos.resize(l);
  for (std::size_t k = 0; k < l; ++k) {
    out.frag_pos[k] = frag.assignment[perm[k]];
    out.intra_pos[k] = (k > 0 && out.frag_pos[k] == out.frag_pos[k - 1]) ? out.intra_pos[k - 1] + 1 : 0;
  }
  return out;
}

void check_fragmentation(const Molecule& mol, const Fragmentation& frag) {
  const std::size_t l = mol.atom_count(), h = frag.count();
  if (frag.assignment.size() != l) throw ValidationError("fragmentation does not cover every atom");
  std::vector<std::vector<std::size_t>> members(h);
  for (std::size_t i = 0; i < l; ++i) {
    if (frag.assignment[i] >= h) throw ValidationError("atom assigned to unknown fragment");
    members[frag.assignment[i]].push_back(i);
  }
  const auto adj = adjacency_of(mol);
  for (std::size_t f = 0; f < h; ++f) {
    if (members[f].empty()) throw ValidationError("fragment " + std::to_string(f) + " is empty");
    if (f > 0 && members[f].front() < members[f - 1].front()) {
      throw ValidationError("fragment ordinals not ordered by minimum atom index");
    }
    std::vector<bool> seen(l, false);
    std::queue<std::size_t> q;
    q.push(members[f].front());
    seen[members[f].front()] = true;
    std::size_t reached = 0;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      ++reached;
      for (const auto& [v, o] : adj[u]) {
        if (!seen[v] && frag.assignment[v] == f) {
          seen[v] = true;
          q.push(v);
        }
      }
    }
    if (reached != members[f].size()) throw ValidationError("fragment " + std::to_string(f) + " is disconnected");
  }
}

void write_vocab(const std::filesystem::path& path, const FragmentVocab& vocab) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ValidationError("cannot write vocabulary " + path.string());
  os << nlohmann::ordered_json{{"vocab_size", vocab.size()}}.dump() << '\n';
  for (const auto& e : vocab.entries()) {
    os << nlohmann::ordered_json{{"id", e.id}, {"pattern", e.pattern}, {"freq", e.frequency}}.dump() << '\n';
  }
}

FragmentVocab read_vocab(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open vocabulary " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> declared;
  std::vector<VocabEntry> entries;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, "byte " + std::to_string(e.byte) + ": malformed JSON");
    }
    try {
      if (!declared) {
        declared = doc.at("vocab_size").get<std::size_t>();
        continue;
      }
      entries.push_back(
          {doc.at("id").get<std::size_t>(), doc.at("pattern").get<std::string>(), doc.at("freq").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!declared) throw ValidationError("vocabulary file has no header line");
  if (*declared != entries.size()) {
    throw ValidationError("vocabulary header declares " + std::to_string(*declared) + " entries, found " +
                          std::to_string(entries.size()));
  }
  return FragmentVocab(std::move(entries));
}

}  // namespace molmamba
