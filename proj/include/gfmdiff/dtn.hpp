#pragma once

// Dual-track transformer denoiser: atom-pair attention over nodes, pair-triplet
// attention over edges, atom-to-pair connection, equivariant position update
// and re-featurization of the moved geometry.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gfmdiff/diffusion.hpp"
#include "gfmdiff/geometry.hpp"
#include "gfmdiff/nn.hpp"
#include "gfmdiff/ops.hpp"
#include "gfmdiff/random.hpp"

namespace gfm {

struct DtnConfig {
  std::size_t n_layers = 5;
  std::size_t d_model = 256;
  std::size_t n_heads = 8;
  std::size_t d_ff = 0;    // 0 means 4 * d_model
  std::size_t d_trip = 0;  // 0 means d_model / 4
  double dropout = 0.1;
  std::size_t nf = 5;
  std::size_t max_valency = 4;
  RbfConfig rbf;
  std::size_t conditioning_dim = 0;
  std::size_t time_dim = 16;
  double triplet_cutoff = 0.0;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t trip_width() const { return d_trip ? d_trip : std::max<std::size_t>(1, d_model / 4); }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1) throw ContractError("n_layers must be at least 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      throw ContractError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (trip_width() > d_model) throw ContractError("d_trip must not exceed d_model");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must be in [0, 1)");
    if (nf < 1) throw ContractError("nf must be at least 1");
    if (conditioning_dim > 1) throw ContractError("only a single context scalar is supported");
    if (time_dim % 2 != 0) throw ContractError("time_dim must be even");
    if (rbf.n_bases < 1 || !(rbf.r_max > 0.0)) throw ContractError("rbf needs n_bases >= 1 and r_max > 0");
  }
};

template <class T>
struct EmbeddingSet {
  Tensor<T> e_node;     // N x d
  Tensor<T> e_pair;     // N x N x d
  Tensor<T> e_triplet;  // N x N x N x d_trip
  TripletMasks masks;

  std::size_t size() const { return e_node.dim(0); }
};

// sin/cos of s * pi * 2^k, k = 0 .. dim/2 - 1.
inline std::vector<double> time_features(double s, std::size_t dim) {
  std::vector<double> f(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k));
    f[2 * k] = std::sin(w * s);
    f[2 * k + 1] = std::cos(w * s);
  }
  return f;
}

template <class T>
class Dtn : public Denoiser<T> {
 public:
  Dtn(const DtnConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model, dt = cfg_.trip_width(), nb = cfg_.rbf.n_bases;
    dist_basis_ = cfg_.rbf.distance_basis();
    angle_basis_ = cfg_.rbf.angle_basis();
    auto& s = store_;
    node_in_ = Linear<T>(s, "dtn.embed.node", cfg_.nf + 2 + cfg_.time_dim, d, rng);
    if (cfg_.conditioning_dim > 0) context_in_ = Linear<T>(s, "dtn.embed.context", 1, d, rng, false);
    pair_rbf_ = Linear<T>(s, "dtn.embed.pair_rbf", nb, d, rng);
    pair_i_ = Linear<T>(s, "dtn.embed.pair_i", d, d, rng, false);
    pair_j_ = Linear<T>(s, "dtn.embed.pair_j", d, d, rng, false);
    trip_rbf_ = Linear<T>(s, "dtn.embed.triplet_rbf", nb, dt, rng);
    trip_i_ = Linear<T>(s, "dtn.embed.triplet_i", d, dt, rng, false);
    trip_j_ = Linear<T>(s, "dtn.embed.triplet_j", d, dt, rng, false);
    trip_k_ = Linear<T>(s, "dtn.embed.triplet_k", d, dt, rng, false);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) layers_.push_back(make_layer(l, rng));
    out_ln_ = LayerNorm<T>(s, "dtn.readout.ln", d);
    out_feat_ = Linear<T>(s, "dtn.readout.feat", d, cfg_.nf + 2, rng);
    coord_scale_ = s.create("dtn.readout.coord_scale", {1}, {T{1}});
  }

  const DtnConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  EmbeddingSet<T> embed_inputs(const Tensor<T>& P, const Tensor<T>& H, std::size_t t, std::size_t T_steps,
                               std::optional<double> context) const {
    if (P.rank() != 2 || P.dim(1) != 3) throw ContractError("coordinates must be [N,3], got " + shape_str(P.shape()));
    const std::size_t n = P.dim(0);
    if (n < 1) throw ContractError("molecule has no atoms");
    if (H.rank() != 2 || H.dim(0) != n || H.dim(1) != cfg_.nf + 2) {
      throw ContractError("features " + shape_str(H.shape()) + " inconsistent with " + std::to_string(n) +
                          " atoms and " + std::to_string(cfg_.nf + 2) + " channels");
    }
    if (T_steps == 0 || t > T_steps) throw ContractError("time step outside [0, T]");
    if (cfg_.conditioning_dim > 0 && !context) throw ContractError("conditional model needs a context value");
    if (cfg_.conditioning_dim == 0 && context) throw ContractError("unconditional model was given a context value");

    const auto tf = time_features(static_cast<double>(t) / static_cast<double>(T_steps), cfg_.time_dim);
    std::vector<T> trow;
    for (std::size_t i = 0; i < n; ++i)
      for (double v : tf) trow.push_back(static_cast<T>(v));
    auto temb = constant<T>({n, cfg_.time_dim}, std::move(trow));
    auto e_node = node_in_(concat<T>({H, temb}, 1));
    if (context) e_node = e_node + context_in_(constant<T>({1, 1}, {static_cast<T>(*context)}));

    EmbeddingSet<T> e;
    e.e_node = e_node;
    const std::size_t d = cfg_.d_model, dt = cfg_.trip_width();
    auto dist = pairwise_distances(P);
    e.e_pair = pair_rbf_(rbf_expand(dist, dist_basis_)) + reshape(pair_i_(e_node), {n, 1, d}) +
               reshape(pair_j_(e_node), {1, n, d});
    auto tri = triplet_angles(P, dist, cfg_.triplet_cutoff);
    e.e_triplet = trip_rbf_(rbf_expand(tri.angles, angle_basis_)) + reshape(trip_i_(e_node), {n, 1, 1, dt}) +
                  reshape(trip_j_(e_node), {1, n, 1, dt}) + reshape(trip_k_(e_node), {1, 1, n, dt});
    e.masks = std::move(tri.masks);
    return e;
  }

  // attn, when given, receives the [N, N, H] attention weights (softmax over axis 1).
  Tensor<T> atom_pair_track(std::size_t l, const EmbeddingSet<T>& e, Rng& rng, bool training,
                            Tensor<T>* attn = nullptr) const {
    const auto& L = layers_.at(l).atom;
    const std::size_t n = e.size(), d = cfg_.d_model, h = cfg_.n_heads, dh = cfg_.head_dim();
    auto q = reshape(L.q(L.ln_node(e.e_node)), {n, 1, h, dh});
    auto k = reshape(L.k(L.ln_pair(e.e_pair)), {n, n, h, dh});
    auto scores = scale(sum(q * k, 3), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto a = softmax(scores, 1);
    if (attn) *attn = a;
    a = dropout(a, cfg_.dropout, rng, training);
    auto v = reshape(L.v_pair(e.e_pair) + reshape(L.v_i(e.e_node), {n, 1, d}) + reshape(L.v_j(e.e_node), {1, n, d}),
                     {n, n, h, dh});
    auto mixed = reshape(sum(reshape(a, {n, n, h, 1}) * v, 1), {n, d});
    auto x = e.e_node + L.out(mixed);
    return x + L.ff(L.ln_ff(x), cfg_.dropout, rng, training);
  }

  // attn, when given, receives the [N, N, N, H] weights (softmax over axis 2).
  Tensor<T> pair_triplet_track(std::size_t l, const EmbeddingSet<T>& e, Rng& rng, bool training,
                               Tensor<T>* attn = nullptr) const {
    const auto& L = layers_.at(l).pair;
    const std::size_t n = e.size(), d = cfg_.d_model, h = cfg_.n_heads, dh = cfg_.head_dim();
    auto lp = L.ln_pair(e.e_pair);
    auto q = reshape(L.q(lp), {n, n, 1, h, dh});
    auto k = reshape(L.k_pair(lp), {n, 1, n, h, dh}) + reshape(L.k_trip(L.ln_trip(e.e_triplet)), {n, n, n, h, dh});
    auto scores = scale(sum(q * k, 4), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    std::vector<unsigned char> mask(n * n * n * h);
    for (std::size_t idx = 0; idx < n * n * n; ++idx)
      for (std::size_t c = 0; c < h; ++c) mask[idx * h + c] = e.masks.attend[idx];
    auto a = masked_softmax(scores, mask, 2);
    if (attn) *attn = a;
    a = dropout(a, cfg_.dropout, rng, training);
    auto v = reshape(L.v_trip(e.e_triplet) + reshape(L.v_ij(e.e_pair), {n, n, 1, d}) +
                         reshape(L.v_ik(e.e_pair), {n, 1, n, d}),
                     {n, n, n, h, dh});
    auto mixed = reshape(sum(reshape(a, {n, n, n, h, 1}) * v, 2), {n, n, d});
    auto x = e.e_pair + L.out(mixed);
    return x + L.ff(L.ln_ff(x), cfg_.dropout, rng, training);
  }

  Tensor<T> connection_module(std::size_t l, const Tensor<T>& e_node, const Tensor<T>& e_pair) const {
    const auto& L = layers_.at(l).conn;
    const std::size_t n = e_node.dim(0), d = cfg_.d_model;
    auto prod = reshape(L.a(e_node), {n, 1, d}) * reshape(L.b(e_node), {1, n, d});
    return L.ln(e_pair + L.mix(prod));
  }

  Tensor<T> position_update(std::size_t l, const Tensor<T>& e_pair, const Tensor<T>& P) const {
    const auto& L = layers_.at(l).pos;
    const std::size_t n = P.dim(0);
    auto m = L.out(silu(L.hidden(e_pair)));  // [N, N, 1]
    auto coef = m / add_scalar(reshape(pairwise_distances(P), {n, n, 1}), T{1});
    auto delta = sum(pair_displacements(P) * coef, 1);
    return project_zero_com(P + delta);
  }

  EmbeddingSet<T> refresh_geometry(std::size_t l, const EmbeddingSet<T>& e, const Tensor<T>& P_new) const {
    const auto& L = layers_.at(l).refresh;
    if (!L.active) throw ContractError("layer " + std::to_string(l) + " has no refresh stage");
    const std::size_t n = e.size(), d = cfg_.d_model;
    auto dist = pairwise_distances(P_new);
    auto inner = L.rbf(rbf_expand(dist, dist_basis_)) + L.pair(e.e_pair);
    EmbeddingSet<T> out;
    out.e_node = e.e_node;
    out.e_pair = L.outer(inner) + reshape(L.node_i(e.e_node), {n, 1, d}) + reshape(L.node_j(e.e_node), {1, n, d});
    auto tri = triplet_angles(P_new, dist, cfg_.triplet_cutoff);
    out.e_triplet = L.trip_rbf(rbf_expand(tri.angles, angle_basis_)) + L.trip(e.e_triplet);
    out.masks = std::move(tri.masks);
    return out;
  }

  DenoiserOutput<T> predict(const Tensor<T>& P, const Tensor<T>& H, std::size_t t, std::size_t T_steps,
                            std::optional<double> context, Rng& rng, bool training) override {
    auto p_in = project_zero_com(P);
    auto e = embed_inputs(p_in, H, t, T_steps, context);
    auto pos = p_in;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      e.e_node = atom_pair_track(l, e, rng, training);
      e.e_pair = pair_triplet_track(l, e, rng, training);
      e.e_pair = connection_module(l, e.e_node, e.e_pair);
      pos = position_update(l, e.e_pair, pos);
      if (l + 1 < cfg_.n_layers) e = refresh_geometry(l, e, pos);
    }
    DenoiserOutput<T> out;
    out.eps_coord = project_zero_com((pos - p_in) * coord_scale_);
    out.eps_feat = out_feat_(out_ln_(e.e_node));
    return out;
  }

 private:
  struct AtomTrack {
    LayerNorm<T> ln_node, ln_pair, ln_ff;
    Linear<T> q, k, v_pair, v_i, v_j, out;
    FeedForward<T> ff;
  };
  struct PairTrack {
    LayerNorm<T> ln_pair, ln_trip, ln_ff;
    Linear<T> q, k_pair, k_trip, v_trip, v_ij, v_ik, out;
    FeedForward<T> ff;
  };
  struct Connection {
    Linear<T> a, b, mix;
    LayerNorm<T> ln;
  };
  struct PosUpdate {
    Linear<T> hidden, out;
  };
  struct Refresh {
    bool active = false;
    Linear<T> rbf, pair, outer, node_i, node_j, trip_rbf, trip;
  };
  struct Layer {
    AtomTrack atom;
    PairTrack pair;
    Connection conn;
    PosUpdate pos;
    Refresh refresh;
  };

  Layer make_layer(std::size_t l, Rng& rng) {
    const std::size_t d = cfg_.d_model, dt = cfg_.trip_width(), nb = cfg_.rbf.n_bases, ff = cfg_.ff_width();
    const std::string p = "dtn.layer" + std::to_string(l) + ".";
    auto& s = store_;
    Layer L;
    // Key biases, the bias of a key-only LayerNorm and the node term of the key
    // are constant along the softmax axis, so they are left out.
    L.atom.ln_node = LayerNorm<T>(s, p + "atomtrack.ln_node", d);
    L.atom.ln_pair = LayerNorm<T>(s, p + "atomtrack.ln_pair", d, false);
    L.atom.q = Linear<T>(s, p + "atomtrack.q_proj", d, d, rng);
    L.atom.k = Linear<T>(s, p + "atomtrack.k_proj", d, d, rng, false);
    L.atom.v_pair = Linear<T>(s, p + "atomtrack.v_pair", d, d, rng);
    L.atom.v_i = Linear<T>(s, p + "atomtrack.v_i", d, d, rng, false);
    L.atom.v_j = Linear<T>(s, p + "atomtrack.v_j", d, d, rng, false);
    L.atom.out = Linear<T>(s, p + "atomtrack.out_proj", d, d, rng, false);
    L.atom.ln_ff = LayerNorm<T>(s, p + "atomtrack.ln_ff", d);
    L.atom.ff = FeedForward<T>(s, p + "atomtrack.ff", d, ff, rng);

    L.pair.ln_pair = LayerNorm<T>(s, p + "pairtrack.ln_pair", d);
    L.pair.ln_trip = LayerNorm<T>(s, p + "pairtrack.ln_triplet", dt, false);
    L.pair.q = Linear<T>(s, p + "pairtrack.q_proj", d, d, rng);
    L.pair.k_pair = Linear<T>(s, p + "pairtrack.k_pair", d, d, rng, false);
    L.pair.k_trip = Linear<T>(s, p + "pairtrack.k_triplet", dt, d, rng, false);
    L.pair.v_trip = Linear<T>(s, p + "pairtrack.v_triplet", dt, d, rng);
    L.pair.v_ij = Linear<T>(s, p + "pairtrack.v_ij", d, d, rng, false);
    L.pair.v_ik = Linear<T>(s, p + "pairtrack.v_ik", d, d, rng, false);
    L.pair.out = Linear<T>(s, p + "pairtrack.out_proj", d, d, rng, false);
    L.pair.ln_ff = LayerNorm<T>(s, p + "pairtrack.ln_ff", d);
    L.pair.ff = FeedForward<T>(s, p + "pairtrack.ff", d, ff, rng);

    L.conn.a = Linear<T>(s, p + "connection.left", d, d, rng);
    L.conn.b = Linear<T>(s, p + "connection.right", d, d, rng);
    L.conn.mix = Linear<T>(s, p + "connection.mix", d, d, rng);
    L.conn.ln = LayerNorm<T>(s, p + "connection.ln", d);

    L.pos.hidden = Linear<T>(s, p + "posupdate.hidden", d, d, rng);
    L.pos.out = Linear<T>(s, p + "posupdate.out", d, 1, rng, true, Init::kZeros);

    // Nothing reads refreshed embeddings after the last layer.
    if (l + 1 < cfg_.n_layers) {
      L.refresh.active = true;
      L.refresh.rbf = Linear<T>(s, p + "refresh.pair_rbf", nb, d, rng);
      L.refresh.pair = Linear<T>(s, p + "refresh.pair", d, d, rng, false);
      L.refresh.outer = Linear<T>(s, p + "refresh.pair_mix", d, d, rng);
      L.refresh.node_i = Linear<T>(s, p + "refresh.node_i", d, d, rng, false);
      L.refresh.node_j = Linear<T>(s, p + "refresh.node_j", d, d, rng, false);
      L.refresh.trip_rbf = Linear<T>(s, p + "refresh.triplet_rbf", nb, dt, rng);
      L.refresh.trip = Linear<T>(s, p + "refresh.triplet", dt, dt, rng, false);
    }
    return L;
  }

  DtnConfig cfg_;
  RbfBasis dist_basis_, angle_basis_;
  ParameterStore<T> store_;
  Linear<T> node_in_, context_in_, pair_rbf_, pair_i_, pair_j_, trip_rbf_, trip_i_, trip_j_, trip_k_;
  std::vector<Layer> layers_;
  LayerNorm<T> out_ln_;
  Linear<T> out_feat_;
  Tensor<T> coord_scale_;
};

}  // namespace gfm
