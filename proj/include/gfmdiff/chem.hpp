#pragma once

// Bond graphs inferred from point clouds, plus the stability / validity /
// uniqueness metrics computed over a corpus of graphs.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "gfmdiff/bonds.hpp"
#include "gfmdiff/elements.hpp"

namespace gfm {

struct Bond {
  std::size_t i = 0;
  std::size_t j = 0;  // i < j
  int order = 1;

  friend bool operator==(const Bond&, const Bond&) = default;
};

struct MoleculeGraph {
  std::vector<std::string> symbols;
  std::vector<std::array<double, 3>> coords;
  std::vector<Bond> bonds;

  std::size_t size() const { return symbols.size(); }

  std::vector<int> valencies() const {
    std::vector<int> v(symbols.size(), 0);
    for (const auto& b : bonds) {
      v[b.i] += b.order;
      v[b.j] += b.order;
    }
    return v;
  }

  // Adds a bond, normalizing so i < j. Self-bonds and orders outside 1..3 are rejected.
  void add_bond(std::size_t a, std::size_t b, int order) {
    if (a == b) throw std::invalid_argument("self-bond on atom " + std::to_string(a));
    if (order < 1 || order > 3) throw std::invalid_argument("bond order must be 1..3");
    if (a > b) std::swap(a, b);
    bonds.push_back({a, b, order});
  }
};

// Bonds between every pair whose distance passes the table test for the
// atoms' actual element types.
inline MoleculeGraph infer_graph(const std::vector<std::array<double, 3>>& coords,
                                 const std::vector<std::string>& symbols, const BondTable& table,
                                 BondOrderRule rule = BondOrderRule::kArgminMargin) {
  if (coords.size() != symbols.size()) throw std::invalid_argument("coordinate and symbol counts differ");
  std::vector<std::size_t> type(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) type[i] = table.elements().index(symbols[i]);
  MoleculeGraph g;
  g.symbols = symbols;
  g.coords = coords;
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t j = i + 1; j < coords.size(); ++j) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) d2 += (coords[i][c] - coords[j][c]) * (coords[i][c] - coords[j][c]);
      const int order = decide_order(table.margins_at(std::sqrt(d2), type[i], type[j]), rule);
      if (order > 0) g.bonds.push_back({i, j, order});
    }
  return g;
}

inline std::vector<bool> stable_atoms(const MoleculeGraph& g, const ValenceTable& valence) {
  const auto v = g.valencies();
  std::vector<bool> ok(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) ok[i] = valence.allowed(g.symbols[i], v[i]);
  return ok;
}

inline bool molecule_is_stable(const MoleculeGraph& g, const ValenceTable& valence) {
  const auto ok = stable_atoms(g, valence);
  return std::all_of(ok.begin(), ok.end(), [](bool b) { return b; });
}

inline double atom_stability(const std::vector<MoleculeGraph>& graphs, const ValenceTable& valence = {}) {
  std::size_t total = 0, stable = 0;
  for (const auto& g : graphs) {
    for (bool b : stable_atoms(g, valence)) {
      ++total;
      stable += b ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(stable) / static_cast<double>(total);
}

inline double molecule_stability(const std::vector<MoleculeGraph>& graphs, const ValenceTable& valence = {}) {
  if (graphs.empty()) return 0.0;
  std::size_t stable = 0;
  for (const auto& g : graphs) stable += molecule_is_stable(g, valence) ? 1 : 0;
  return static_cast<double>(stable) / static_cast<double>(graphs.size());
}

// Connected-component label per atom.
inline std::vector<std::size_t> components(const MoleculeGraph& g) {
  std::vector<std::size_t> parent(g.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& b : g.bonds) parent[find(b.i)] = find(b.j);
  std::vector<std::size_t> label(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) label[i] = find(i);
  return label;
}

enum class ValidityMode {
  kStrict,           // every atom allowed and a single connected component
  kLargestFragment,  // every atom of the largest fragment allowed
};

inline bool is_valid(const MoleculeGraph& g, const ValenceTable& valence, ValidityMode mode = ValidityMode::kStrict) {
  if (g.size() == 0) return false;
  const auto ok = stable_atoms(g, valence);
  const auto comp = components(g);
  std::map<std::size_t, std::size_t> counts;
  for (auto c : comp) ++counts[c];
  if (mode == ValidityMode::kStrict) {
    if (counts.size() != 1) return false;
    return std::all_of(ok.begin(), ok.end(), [](bool b) { return b; });
  }
  std::size_t best = comp[0];
  for (const auto& [c, n] : counts) {
    if (n > counts[best]) best = c;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (comp[i] == best && !ok[i]) return false;
  }
  return true;
}

inline double validity(const std::vector<MoleculeGraph>& graphs, const ValenceTable& valence = {},
                       ValidityMode mode = ValidityMode::kStrict) {
  if (graphs.empty()) return 0.0;
  std::size_t valid = 0;
  for (const auto& g : graphs) valid += is_valid(g, valence, mode) ? 1 : 0;
  return static_cast<double>(valid) / static_cast<double>(graphs.size());
}

namespace detail {

// Labeled graph used by the canonicalizer: node labels plus an adjacency list
// of (neighbor, bond order).
struct LabeledGraph {
  std::vector<std::string> labels;
  std::vector<std::vector<std::pair<std::size_t, int>>> adj;
};

// Folds degree-1 atoms into their (non-leaf) neighbor's label. Leaves on the
// same parent with equal (symbol, order) are interchangeable, so this keeps
// the form canonical while removing most symmetric branching.
inline LabeledGraph fold_leaves(const MoleculeGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::vector<std::pair<std::size_t, int>>> adj(n);
  for (const auto& b : g.bonds) {
    adj[b.i].push_back({b.j, b.order});
    adj[b.j].push_back({b.i, b.order});
  }
  std::vector<bool> folded(n, false);
  std::vector<std::vector<std::string>> attached(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (adj[v].size() == 1 && adj[adj[v][0].first].size() > 1) {
      folded[v] = true;
      attached[adj[v][0].first].push_back(g.symbols[v] + std::to_string(adj[v][0].second));
    }
  }
  std::vector<std::size_t> remap(n, 0);
  LabeledGraph out;
  for (std::size_t v = 0; v < n; ++v) {
    if (folded[v]) continue;
    remap[v] = out.labels.size();
    std::sort(attached[v].begin(), attached[v].end());
    std::string label = g.symbols[v] + "(";
    for (const auto& s : attached[v]) label += s + ",";
    out.labels.push_back(label + ")");
  }
  out.adj.resize(out.labels.size());
  for (std::size_t v = 0; v < n; ++v) {
    if (folded[v]) continue;
    for (const auto& [u, o] : adj[v]) {
      if (!folded[u]) out.adj[remap[v]].push_back({remap[u], o});
    }
  }
  return out;
}

// Refines a coloring until stable: a vertex's new color is determined by its
// old color and the multiset of (bond order, neighbor color).
inline std::vector<int> refine(const LabeledGraph& g, std::vector<int> color) {
  const std::size_t n = g.labels.size();
  for (;;) {
    std::vector<std::pair<std::pair<int, std::vector<std::pair<int, int>>>, std::size_t>> sig(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::pair<int, int>> nb;
      for (const auto& [u, o] : g.adj[v]) nb.push_back({o, color[u]});
      std::sort(nb.begin(), nb.end());
      sig[v] = {{color[v], std::move(nb)}, v};
    }
    std::sort(sig.begin(), sig.end());
    std::vector<int> next(n);
    int c = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k > 0 && sig[k].first != sig[k - 1].first) ++c;
      next[sig[k].second] = c;
    }
    const std::size_t before = std::set<int>(color.begin(), color.end()).size();
    if (static_cast<std::size_t>(c) + 1 == before || n == 0) return next;
    color = std::move(next);
  }
}

inline std::string encode(const LabeledGraph& g, const std::vector<int>& color) {
  const std::size_t n = g.labels.size();
  std::vector<std::size_t> pos(n);
  for (std::size_t v = 0; v < n; ++v) pos[v] = static_cast<std::size_t>(color[v]);
  std::vector<std::string> lab(n);
  for (std::size_t v = 0; v < n; ++v) lab[pos[v]] = g.labels[v];
  std::vector<std::tuple<std::size_t, std::size_t, int>> edges;
  for (std::size_t v = 0; v < n; ++v)
    for (const auto& [u, o] : g.adj[v]) {
      if (pos[v] < pos[u]) edges.emplace_back(pos[v], pos[u], o);
    }
  std::sort(edges.begin(), edges.end());
  std::ostringstream os;
  for (const auto& l : lab) os << l << ';';
  os << '|';
  for (const auto& [a, b, o] : edges) os << a << '-' << b << ':' << o << ';';
  return os.str();
}

// Individualization-refinement search; returns the lexicographically
// smallest encoding over all discrete refinements.
inline void canonical_search(const LabeledGraph& g, const std::vector<int>& color, std::string& best) {
  const std::size_t n = g.labels.size();
  std::map<int, std::vector<std::size_t>> cells;
  for (std::size_t v = 0; v < n; ++v) cells[color[v]].push_back(v);
  const std::vector<std::size_t>* target = nullptr;
  int target_color = 0;
  for (const auto& [c, members] : cells) {
    if (members.size() > 1) {
      target = &members;
      target_color = c;
      break;
    }
  }
  if (!target) {
    auto code = encode(g, color);
    if (best.empty() || code < best) best = std::move(code);
    return;
  }
  for (std::size_t v : *target) {
    // Colors are dense ranks; doubling leaves room to split v ahead of its cell.
    std::vector<int> split(n);
    for (std::size_t u = 0; u < n; ++u) split[u] = 2 * color[u] + 1;
    split[v] = 2 * target_color;
    canonical_search(g, refine(g, split), best);
  }
}

}  // namespace detail

// Isomorphism-invariant string for a bond graph (element symbols and orders).
inline std::string canonical_form(const MoleculeGraph& g) {
  const auto lg = detail::fold_leaves(g);
  const std::size_t n = lg.labels.size();
  std::vector<std::string> sorted = lg.labels;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> color(n);
  for (std::size_t v = 0; v < n; ++v) {
    color[v] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), lg.labels[v]) - sorted.begin());
  }
  std::string best;
  detail::canonical_search(lg, detail::refine(lg, color), best);
  return best;
}

// Fraction of distinct canonical forms among the valid molecules.
inline double uniqueness(const std::vector<MoleculeGraph>& graphs, const ValenceTable& valence = {},
                         ValidityMode mode = ValidityMode::kStrict) {
  std::set<std::string> seen;
  std::size_t valid = 0;
  for (const auto& g : graphs) {
    if (!is_valid(g, valence, mode)) continue;
    ++valid;
    seen.insert(canonical_form(g));
  }
  return valid == 0 ? 0.0 : static_cast<double>(seen.size()) / static_cast<double>(valid);
}

struct MetricsReport {
  std::size_t molecules = 0;
  std::size_t atoms = 0;
  double atom_stability = 0;
  double molecule_stability = 0;
  double validity = 0;
  double uniqueness = 0;
  double uniqueness_times_validity = 0;
};

inline MetricsReport evaluate_graphs(const std::vector<MoleculeGraph>& graphs, const ValenceTable& valence = {},
                                     ValidityMode mode = ValidityMode::kStrict) {
  MetricsReport r;
  r.molecules = graphs.size();
  for (const auto& g : graphs) r.atoms += g.size();
  r.atom_stability = atom_stability(graphs, valence);
  r.molecule_stability = molecule_stability(graphs, valence);
  r.validity = validity(graphs, valence, mode);
  r.uniqueness = uniqueness(graphs, valence, mode);
  r.uniqueness_times_validity = r.uniqueness * r.validity;
  return r;
}

}  // namespace gfm
