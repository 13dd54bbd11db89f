#pragma once

// Geometry-driven valency loss. Atom-type probabilities and pair-type
// products are differentiable; bond existence and order come from distance
// margins against the bond table and are held constant during backward.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gfmdiff/bonds.hpp"
#include "gfmdiff/geometry.hpp"
#include "gfmdiff/ops.hpp"

namespace gfm {

// Margins d_ij - (D[a,b,o] + M[o]) laid out as [N, N, nf, nf, 3].
struct BondMargins {
  std::size_t atoms = 0;
  std::size_t types = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j, std::size_t a, std::size_t b, int o) const {
    return values[(((i * atoms + j) * types + a) * types + b) * 3 + static_cast<std::size_t>(o)];
  }
};

// Bond orders in {0,1,2,3} laid out as [N, N, nf, nf]; isbond == order > 0.
struct BondDecision {
  std::size_t atoms = 0;
  std::size_t types = 0;
  std::vector<std::uint8_t> order;

  std::uint8_t at(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const {
    return order[((i * atoms + j) * types + a) * types + b];
  }
  bool is_bond(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const { return at(i, j, a, b) > 0; }
};

enum class ValencyMode {
  kOrderWeighted,  // a double bond contributes 2
  kBondCount,      // every bond contributes 1
};

enum class GfWeightMode {
  kSqrtAlphaBar,  // sqrt of the cumulative signal level at t
  kAlpha,         // per-step alpha_t
};

// Softmax over the type axis of [N, nf] logits.
template <class T>
Tensor<T> atom_type_probs(const Tensor<T>& logits) {
  return softmax(logits, 1);
}

// p_pair[i, j, a, b] = p[i, a] * p[j, b].
template <class T>
Tensor<T> pair_type_probs(const Tensor<T>& p_atom) {
  const std::size_t n = p_atom.dim(0), nf = p_atom.dim(1);
  return reshape(p_atom, {n, 1, nf, 1}) * reshape(p_atom, {1, n, 1, nf});
}

// coords: flattened N x 3 in Angstrom.
inline BondMargins bond_margins(const std::vector<double>& coords, const BondTable& table) {
  const std::size_t n = coords.size() / 3, nf = table.types();
  BondMargins m;
  m.atoms = n;
  m.types = nf;
  m.values.resize(n * n * nf * nf * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = coords[3 * i] - coords[3 * j];
      const double dy = coords[3 * i + 1] - coords[3 * j + 1];
      const double dz = coords[3 * i + 2] - coords[3 * j + 2];
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      for (std::size_t a = 0; a < nf; ++a)
        for (std::size_t b = 0; b < nf; ++b) {
          const auto mm = table.margins_at(d, a, b);
          const std::size_t base = (((i * n + j) * nf + a) * nf + b) * 3;
          for (int o = 0; o < 3; ++o) m.values[base + static_cast<std::size_t>(o)] = mm[o];
        }
    }
  return m;
}

inline BondDecision decide_bonds(const BondMargins& margins, BondOrderRule rule = BondOrderRule::kArgminMargin) {
  const std::size_t n = margins.atoms, nf = margins.types;
  BondDecision d;
  d.atoms = n;
  d.types = nf;
  d.order.assign(n * n * nf * nf, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      for (std::size_t a = 0; a < nf; ++a)
        for (std::size_t b = 0; b < nf; ++b) {
          const std::array<double, 3> m{margins.at(i, j, a, b, 0), margins.at(i, j, a, b, 1), margins.at(i, j, a, b, 2)};
          d.order[((i * n + j) * nf + a) * nf + b] = static_cast<std::uint8_t>(decide_order(m, rule));
        }
    }
  return d;
}

// V_pred[i] = sum_{j, a, b} p_pair[i, j, a, b] * w(order[i, j, a, b]); the
// decision enters as a constant so gradient flows through p_pair only.
template <class T>
Tensor<T> predicted_valencies(const Tensor<T>& p_pair, const BondDecision& decision,
                              ValencyMode mode = ValencyMode::kOrderWeighted) {
  const std::size_t n = decision.atoms, nf = decision.types;
  if (p_pair.shape() != Shape{n, n, nf, nf}) {
    throw ShapeError("pair probabilities " + shape_str(p_pair.shape()) + " do not match bond decision");
  }
  std::vector<T> w(decision.order.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto o = decision.order[k];
    w[k] = mode == ValencyMode::kOrderWeighted ? static_cast<T>(o) : static_cast<T>(o > 0 ? 1 : 0);
  }
  auto weighted = p_pair * constant<T>({n, n, nf, nf}, std::move(w));
  return sum(reshape(weighted, {n, n * nf * nf}), 1);
}

// sum_i (weight * (V_pred[i] - V_true[i]))^2 over atoms with mask != 0.
template <class T>
Tensor<T> gf_loss(const Tensor<T>& v_pred, const std::vector<double>& v_true, double weight,
                  const std::vector<unsigned char>& mask = {}) {
  const std::size_t n = v_pred.numel();
  if (v_true.size() != n) throw ShapeError("valency vectors differ in length");
  std::vector<T> target(n), keep(n, T{1});
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = static_cast<T>(v_true[i]);
    if (!mask.empty() && !mask[i]) keep[i] = T{0};
  }
  auto diff = (v_pred - constant<T>({n}, std::move(target))) * constant<T>({n}, std::move(keep));
  return sum(square(scale(diff, static_cast<T>(weight))));
}

// End-to-end valency estimate from coordinates and type logits.
template <class T>
Tensor<T> valencies_from_geometry(const std::vector<double>& coords, const Tensor<T>& type_logits,
                                  const BondTable& table, BondOrderRule rule, ValencyMode mode) {
  const auto decision = decide_bonds(bond_margins(coords, table), rule);
  return predicted_valencies(pair_type_probs(atom_type_probs(type_logits)), decision, mode);
}

}  // namespace gfm
