#pragma once

// Invariant geometric features of a point cloud: distances, vertex angles,
// Gaussian radial-basis expansion, and zero center-of-mass projection.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "gfmdiff/ops.hpp"

namespace gfm {

struct RbfBasis {
  std::vector<double> centers;
  std::vector<double> widths;

  std::size_t size() const { return centers.size(); }

  // n centers evenly spaced on [lo, hi], each with width equal to the spacing.
  static RbfBasis uniform(double lo, double hi, std::size_t n) {
    if (n < 1) throw std::invalid_argument("RBF basis needs at least one center");
    RbfBasis b;
    const double spacing = n > 1 ? (hi - lo) / static_cast<double>(n - 1) : (hi - lo > 0 ? hi - lo : 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      b.centers.push_back(n > 1 ? lo + spacing * static_cast<double>(k) : lo);
      b.widths.push_back(spacing);
    }
    return b;
  }

  void validate() const {
    if (centers.empty() || centers.size() != widths.size()) throw std::invalid_argument("malformed RBF basis");
    for (std::size_t k = 1; k < centers.size(); ++k) {
      if (!(centers[k] > centers[k - 1])) throw std::invalid_argument("RBF centers must be strictly increasing");
    }
    for (double w : widths) {
      if (!(w > 0.0)) throw std::invalid_argument("RBF widths must be positive");
    }
  }
};

struct RbfConfig {
  std::size_t n_bases = 32;
  double r_max = 12.0;

  RbfBasis distance_basis() const { return RbfBasis::uniform(0.0, r_max, n_bases); }
  RbfBasis angle_basis() const { return RbfBasis::uniform(0.0, std::numbers::pi, n_bases); }
};

// exp(-(x - c_k)^2 / (2 w_k^2)) for each basis k, appended as a trailing axis.
template <class T>
Tensor<T> rbf_expand(const Tensor<T>& x, const RbfBasis& basis) {
  const std::size_t nb = basis.size();
  Shape out_shape = x.shape();
  out_shape.push_back(nb);
  std::vector<T> c(nb), inv(nb);
  for (std::size_t k = 0; k < nb; ++k) {
    c[k] = static_cast<T>(basis.centers[k]);
    inv[k] = static_cast<T>(1.0 / (basis.widths[k] * basis.widths[k]));
  }
  const auto xv = x.values();
  std::vector<T> out(xv.size() * nb);
  for (std::size_t e = 0; e < xv.size(); ++e) {
    for (std::size_t k = 0; k < nb; ++k) {
      const T d = xv[e] - c[k];
      out[e * nb + k] = std::exp(T{-0.5} * d * d * inv[k]);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [c, inv, nb](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      T acc{0};
      for (std::size_t k = 0; k < nb; ++k) {
        acc -= self.grad[e * nb + k] * self.value[e * nb + k] * (p.value[e] - c[k]) * inv[k];
      }
      p.grad[e] += acc;
    }
  });
}

// Coordinates of shape [N, 3] -> [N, N] Euclidean distances.
template <class T>
Tensor<T> pairwise_distances(const Tensor<T>& coords) {
  if (coords.rank() != 2 || coords.dim(1) != 3) throw ShapeError("coordinates must be [N,3], got " + shape_str(coords.shape()));
  const std::size_t n = coords.dim(0);
  auto diff = reshape(coords, {n, 1, 3}) - reshape(coords, {1, n, 3});
  return sqrt(sum(square(diff), 2));
}

// Relative displacement p_i - p_j, shape [N, N, 3].
template <class T>
Tensor<T> pair_displacements(const Tensor<T>& coords) {
  const std::size_t n = coords.dim(0);
  return reshape(coords, {n, 1, 3}) - reshape(coords, {1, n, 3});
}

inline constexpr double kCoincidentDistance = 1e-6;

struct TripletMasks {
  std::vector<unsigned char> valid;   // non-degenerate triplets
  std::vector<unsigned char> attend;  // valid and within the optional cutoff
};

template <class T>
struct TripletGeometry {
  Tensor<T> angles;  // [N, N, N], angle at vertex i between rays i->j and i->k
  TripletMasks masks;
};

// Triplets with i == j, i == k, j == k, or a coincident leg are degenerate:
// angle 0 with no gradient, and excluded from attention. With cutoff > 0,
// triplets whose two legs both exceed the cutoff are also excluded from
// attention.
template <class T>
TripletGeometry<T> triplet_angles(const Tensor<T>& coords, const Tensor<T>& distances, double cutoff = 0.0) {
  const std::size_t n = coords.dim(0);
  const auto dv = distances.values();
  TripletMasks masks;
  masks.valid.assign(n * n * n, 0);
  masks.attend.assign(n * n * n, 0);
  std::vector<T> pad(n * n * n, T{1});
  std::vector<T> keep(n * n * n, T{0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = (i * n + j) * n + k;
        const double dij = static_cast<double>(dv[i * n + j]);
        const double dik = static_cast<double>(dv[i * n + k]);
        const bool ok = i != j && i != k && j != k && dij > kCoincidentDistance && dik > kCoincidentDistance;
        if (!ok) continue;
        masks.valid[idx] = 1;
        masks.attend[idx] = (cutoff > 0.0 && dij > cutoff && dik > cutoff) ? 0 : 1;
        pad[idx] = T{0};
        keep[idx] = T{1};
      }
  auto v = pair_displacements(coords);
  auto dot = sum(reshape(v, {n, n, 1, 3}) * reshape(v, {n, 1, n, 3}), 3);
  auto denom = reshape(distances, {n, n, 1}) * reshape(distances, {n, 1, n});
  auto safe = denom + constant<T>({n, n, n}, std::move(pad));
  auto angles = arccos(dot / safe) * constant<T>({n, n, n}, std::move(keep));
  return {angles, std::move(masks)};
}

template <class T>
TripletGeometry<T> triplet_angles(const Tensor<T>& coords, double cutoff = 0.0) {
  return triplet_angles(coords, pairwise_distances(coords), cutoff);
}

// Subtracts the column means so the cloud's center of mass is the origin.
template <class T>
Tensor<T> project_zero_com(const Tensor<T>& coords) {
  return coords - mean(coords, 0, /*keepdim=*/true);
}

}  // namespace gfm
