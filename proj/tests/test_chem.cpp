#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "gfmdiff/chem.hpp"
#include "gfmdiff/random.hpp"

namespace {

using gfm::MoleculeGraph;

MoleculeGraph graph(std::vector<std::string> symbols, std::vector<std::tuple<int, int, int>> bonds) {
  MoleculeGraph g;
  g.symbols = std::move(symbols);
  g.coords.assign(g.symbols.size(), {0, 0, 0});
  for (auto [a, b, o] : bonds) g.add_bond(a, b, o);
  return g;
}

// Independent isomorphism test: backtracking over atom maps that preserve
// symbols, degrees and bond orders.
bool isomorphic(const MoleculeGraph& a, const MoleculeGraph& b) {
  const std::size_t n = a.size();
  if (n != b.size() || a.bonds.size() != b.bonds.size()) return false;
  auto matrix = [n](const MoleculeGraph& g) {
    std::vector<int> m(n * n, 0);
    for (const auto& e : g.bonds) m[e.i * n + e.j] = m[e.j * n + e.i] = e.order;
    return m;
  };
  const auto ma = matrix(a), mb = matrix(b);
  auto degree = [n](const std::vector<int>& m, std::size_t v) {
    int d = 0;
    for (std::size_t u = 0; u < n; ++u) d += m[v * n + u] > 0 ? 10 + m[v * n + u] : 0;
    return d;
  };
  std::vector<std::size_t> map(n);
  std::vector<bool> used(n, false);
  std::function<bool(std::size_t)> extend = [&](std::size_t v) {
    if (v == n) return true;
    for (std::size_t w = 0; w < n; ++w) {
      if (used[w] || a.symbols[v] != b.symbols[w] || degree(ma, v) != degree(mb, w)) continue;
      bool ok = true;
      for (std::size_t u = 0; u < v && ok; ++u) ok = ma[v * n + u] == mb[w * n + map[u]];
      if (!ok) continue;
      used[w] = true;
      map[v] = w;
      if (extend(v + 1)) return true;
      used[w] = false;
    }
    return false;
  };
  return extend(0);
}

MoleculeGraph relabel(const MoleculeGraph& g, gfm::Rng& rng) {
  std::vector<std::size_t> perm(g.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm.begin(), perm.end());
  MoleculeGraph out;
  out.symbols.resize(g.size());
  out.coords.assign(g.size(), {0, 0, 0});
  for (std::size_t i = 0; i < g.size(); ++i) out.symbols[perm[i]] = g.symbols[i];
  std::vector<gfm::Bond> bonds = g.bonds;
  rng.shuffle(bonds.begin(), bonds.end());
  for (const auto& b : bonds) out.add_bond(perm[b.i], perm[b.j], b.order);
  return out;
}

MoleculeGraph random_graph(gfm::Rng& rng) {
  const std::vector<std::string> pool{"C", "C", "N", "O", "H"};
  const std::size_t n = static_cast<std::size_t>(rng.uniform_int(3, 8));
  MoleculeGraph g;
  for (std::size_t i = 0; i < n; ++i) g.symbols.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, 4))]);
  g.coords.assign(n, {0, 0, 0});
  for (std::size_t i = 1; i < n; ++i) {
    g.add_bond(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)), i,
               static_cast<int>(rng.uniform_int(1, 2)));
  }
  if (n > 3 && rng.bernoulli(0.5)) {
    std::size_t a = 0, b = n - 1;
    bool present = false;
    for (const auto& e : g.bonds) present = present || (e.i == a && e.j == b);
    if (!present) g.add_bond(a, b, 1);
  }
  return g;
}

// Pairs that one-dimensional color refinement cannot tell apart.
std::vector<MoleculeGraph> refinement_hard_graphs() {
  std::vector<MoleculeGraph> out;
  // Six-ring versus two three-rings.
  out.push_back(graph({"C", "C", "C", "C", "C", "C"}, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 4, 1}, {4, 5, 1}, {5, 0, 1}}));
  out.push_back(graph({"C", "C", "C", "C", "C", "C"}, {{0, 1, 1}, {1, 2, 1}, {2, 0, 1}, {3, 4, 1}, {4, 5, 1}, {5, 3, 1}}));
  // Triangular prism versus complete bipartite K3,3.
  out.push_back(graph({"C", "C", "C", "C", "C", "C"},
                      {{0, 1, 1}, {1, 2, 1}, {2, 0, 1}, {3, 4, 1}, {4, 5, 1}, {5, 3, 1}, {0, 3, 1}, {1, 4, 1}, {2, 5, 1}}));
  out.push_back(graph({"C", "C", "C", "C", "C", "C"},
                      {{0, 3, 1}, {0, 4, 1}, {0, 5, 1}, {1, 3, 1}, {1, 4, 1}, {1, 5, 1}, {2, 3, 1}, {2, 4, 1}, {2, 5, 1}}));
  // Eight-ring versus two four-rings (cyclobutane pair) with hydrogens on one atom each.
  out.push_back(graph({"C", "C", "C", "C", "C", "C", "C", "C", "H", "H"},
                      {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 4, 1}, {4, 5, 1}, {5, 6, 1}, {6, 7, 1}, {7, 0, 1}, {0, 8, 1}, {4, 9, 1}}));
  out.push_back(graph({"C", "C", "C", "C", "C", "C", "C", "C", "H", "H"},
                      {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 0, 1}, {4, 5, 1}, {5, 6, 1}, {6, 7, 1}, {7, 4, 1}, {0, 8, 1}, {4, 9, 1}}));
  // Same ring, different double-bond placement.
  out.push_back(graph({"C", "C", "C", "C", "C", "C"}, {{0, 1, 2}, {1, 2, 1}, {2, 3, 2}, {3, 4, 1}, {4, 5, 2}, {5, 0, 1}}));
  out.push_back(graph({"C", "C", "C", "C", "C", "C"}, {{0, 1, 2}, {1, 2, 1}, {2, 3, 1}, {3, 4, 2}, {4, 5, 1}, {5, 0, 1}}));
  return out;
}

TEST(Graph, ValenciesSumBondOrders) {
  auto g = graph({"C", "O", "O"}, {{0, 1, 2}, {0, 2, 2}});
  EXPECT_EQ(g.valencies(), (std::vector<int>{4, 2, 2}));
  EXPECT_THROW(g.add_bond(1, 1, 1), std::invalid_argument);
  EXPECT_THROW(g.add_bond(0, 1, 4), std::invalid_argument);
}

TEST(InferGraph, MethaneHasFourSingleBonds) {
  const double s = 1.09 / std::sqrt(3.0);
  auto table = gfm::BondTable::standard(gfm::ElementSet::qm9());
  auto g = gfm::infer_graph({{0, 0, 0}, {s, s, s}, {-s, -s, s}, {-s, s, -s}, {s, -s, -s}}, {"C", "H", "H", "H", "H"},
                            table);
  EXPECT_EQ(g.bonds.size(), 4u);
  EXPECT_EQ(g.valencies(), (std::vector<int>{4, 1, 1, 1, 1}));
  EXPECT_TRUE(gfm::molecule_is_stable(g, {}));
}

TEST(InferGraph, OrderRuleChangesEthyleneBond) {
  auto table = gfm::BondTable::standard(gfm::ElementSet::qm9());
  std::vector<std::array<double, 3>> p{{0, 0, 0}, {1.34, 0, 0}};
  EXPECT_EQ(gfm::infer_graph(p, {"C", "C"}, table, gfm::BondOrderRule::kArgminMargin).bonds[0].order, 1);
  EXPECT_EQ(gfm::infer_graph(p, {"C", "C"}, table, gfm::BondOrderRule::kShortestSatisfied).bonds[0].order, 2);
  EXPECT_THROW(gfm::infer_graph(p, {"C"}, table), std::invalid_argument);
  EXPECT_THROW(gfm::infer_graph(p, {"C", "Cl"}, table), gfm::UnknownElementError);
}

TEST(Stability, CountsAtomsAndMolecules) {
  std::vector<MoleculeGraph> gs{
      graph({"O", "H", "H"}, {{0, 1, 1}, {0, 2, 1}}),  // water, stable
      graph({"C", "H", "H"}, {{0, 1, 1}, {0, 2, 1}}),  // carbon under-bonded
  };
  EXPECT_DOUBLE_EQ(gfm::atom_stability(gs), 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(gfm::molecule_stability(gs), 0.5);
  EXPECT_EQ(gfm::atom_stability({}), 0.0);
}

TEST(Stability, HypervalentSulfurAllowed) {
  auto g = graph({"S", "O", "O", "H", "H"}, {{0, 1, 2}, {0, 2, 2}, {0, 3, 1}, {0, 4, 1}});
  EXPECT_TRUE(gfm::molecule_is_stable(g, {}));
  gfm::ValenceTable strict;
  strict.set("S", {2});
  EXPECT_FALSE(gfm::molecule_is_stable(g, strict));
}

TEST(Validity, DisconnectedFailsStrictButPassesLargestFragment) {
  auto g = graph({"O", "H", "H", "H", "H"}, {{0, 1, 1}, {0, 2, 1}, {3, 4, 1}});
  EXPECT_FALSE(gfm::is_valid(g, {}, gfm::ValidityMode::kStrict));
  EXPECT_TRUE(gfm::is_valid(g, {}, gfm::ValidityMode::kLargestFragment));
  auto bad = graph({"O", "H", "H", "C"}, {{0, 1, 1}, {0, 2, 1}});
  EXPECT_TRUE(gfm::is_valid(bad, {}, gfm::ValidityMode::kLargestFragment));
  EXPECT_FALSE(gfm::is_valid(bad, {}, gfm::ValidityMode::kStrict));
  EXPECT_FALSE(gfm::is_valid(MoleculeGraph{}, {}));
}

TEST(Uniqueness, OverValidMoleculesOnly) {
  auto water = graph({"O", "H", "H"}, {{0, 1, 1}, {0, 2, 1}});
  auto water2 = graph({"H", "O", "H"}, {{1, 0, 1}, {2, 1, 1}});
  auto hf = graph({"H", "F"}, {{0, 1, 1}});
  auto junk = graph({"C"}, {});
  EXPECT_DOUBLE_EQ(gfm::uniqueness({water, water2, hf, junk}), 2.0 / 3.0);
  auto r = gfm::evaluate_graphs({water, water2, hf, junk});
  EXPECT_EQ(r.molecules, 4u);
  EXPECT_DOUBLE_EQ(r.validity, 0.75);
  EXPECT_DOUBLE_EQ(r.uniqueness_times_validity, 0.5);
}

TEST(CanonicalForm, DistinguishesRefinementHardPairs) {
  auto hard = refinement_hard_graphs();
  for (std::size_t k = 0; k < hard.size(); k += 2) {
    ASSERT_FALSE(isomorphic(hard[k], hard[k + 1]));
    EXPECT_NE(gfm::canonical_form(hard[k]), gfm::canonical_form(hard[k + 1])) << "pair " << k / 2;
  }
}

TEST(CanonicalForm, DistinguishesIsomers) {
  // Ethanol versus dimethyl ether (heavy-atom skeletons with hydrogens).
  auto ethanol = graph({"C", "C", "O", "H", "H", "H", "H", "H", "H"},
                       {{0, 1, 1}, {1, 2, 1}, {0, 3, 1}, {0, 4, 1}, {0, 5, 1}, {1, 6, 1}, {1, 7, 1}, {2, 8, 1}});
  auto ether = graph({"C", "O", "C", "H", "H", "H", "H", "H", "H"},
                     {{0, 1, 1}, {1, 2, 1}, {0, 3, 1}, {0, 4, 1}, {0, 5, 1}, {2, 6, 1}, {2, 7, 1}, {2, 8, 1}});
  EXPECT_NE(gfm::canonical_form(ethanol), gfm::canonical_form(ether));
}

// Fifty molecules: random graphs, refinement-hard cases and relabeled copies.
// Equality of canonical forms must coincide with isomorphism on every pair.
TEST(CanonicalForm, AgreesWithBruteForceIsomorphism) {
  gfm::Rng rng(2024);
  std::vector<MoleculeGraph> set = refinement_hard_graphs();
  while (set.size() < 34) set.push_back(random_graph(rng));
  while (set.size() < 50) {
    const auto& src = set[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(set.size()) - 1))];
    set.push_back(relabel(src, rng));
  }
  std::vector<std::string> forms;
  for (const auto& g : set) forms.push_back(gfm::canonical_form(g));
  std::size_t iso_pairs = 0;
  for (std::size_t a = 0; a < set.size(); ++a)
    for (std::size_t b = a + 1; b < set.size(); ++b) {
      const bool iso = isomorphic(set[a], set[b]);
      iso_pairs += iso ? 1 : 0;
      EXPECT_EQ(forms[a] == forms[b], iso) << a << " vs " << b;
    }
  EXPECT_GE(iso_pairs, 16u);
}

TEST(CanonicalForm, InvariantUnderRelabeling) {
  gfm::Rng rng(9);
  for (int k = 0; k < 30; ++k) {
    auto g = random_graph(rng);
    const auto f = gfm::canonical_form(g);
    for (int r = 0; r < 5; ++r) EXPECT_EQ(gfm::canonical_form(relabel(g, rng)), f);
  }
}

TEST(Components, LabelsConnectedPieces) {
  auto g = graph({"H", "H", "H", "H"}, {{0, 1, 1}, {2, 3, 1}});
  auto c = gfm::components(g);
  EXPECT_EQ(c[0], c[1]);
  EXPECT_EQ(c[2], c[3]);
  EXPECT_NE(c[0], c[2]);
}

}  // namespace
