#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "finite_difference.hpp"
#include "gfmdiff/dtn.hpp"
#include "test_support.hpp"

using gfm::Dtn;
using gfm::DtnConfig;
using gfm::Rng;
using gfm::Tensor;
using gfm::testing::normwise_error;
using gfm::testing::to_double;

namespace {

DtnConfig small_config(std::size_t layers = 2, std::size_t d = 16) {
  DtnConfig c;
  c.n_layers = layers;
  c.d_model = d;
  c.n_heads = 4;
  c.d_ff = 2 * d;
  c.dropout = 0.1;
  c.nf = 3;
  c.rbf.n_bases = 8;
  c.rbf.r_max = 6.0;
  return c;
}

struct Inputs {
  std::vector<double> P, H;
};

Inputs random_inputs(std::size_t n, std::size_t width, Rng& rng) {
  Inputs in;
  in.P = gfm::testing::random_spaced_cloud(n, rng, 0.8, 1.2);
  gfm::center_in_place(in.P, {});
  in.H.resize(n * width);
  for (auto& v : in.H) v = 0.5 * rng.normal();
  return in;
}

template <class T>
Tensor<T> tensor_of(const std::vector<double>& v, gfm::Shape s) {
  return gfm::to_tensor<T>(v, std::move(s));
}

std::vector<double> permute_rows(const std::vector<double>& v, const std::vector<std::size_t>& perm, std::size_t w) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < w; ++c) out[i * w + c] = v[perm[i] * w + c];
  return out;
}

template <class T>
gfm::DenoiserOutput<T> run(Dtn<T>& net, const Inputs& in, std::size_t t = 17, std::optional<double> ctx = {}) {
  const std::size_t n = in.P.size() / 3, w = in.H.size() / n;
  Rng rng(5);
  return net.predict(tensor_of<T>(in.P, {n, 3}), tensor_of<T>(in.H, {n, w}), t, 50, ctx, rng, false);
}

template <class T>
double equivariance_error(Dtn<T>& net, const Inputs& in, Rng& rng) {
  const std::size_t n = in.P.size() / 3;
  auto q = gfm::testing::random_orthogonal(rng);
  std::array<double, 3> shift{rng.normal(), rng.normal(), rng.normal()};
  auto base = run(net, in);
  Inputs moved = in;
  moved.P = gfm::testing::transform_rows(in.P, q, shift);
  auto out = run(net, moved);
  auto expect_coord = gfm::testing::transform_rows(to_double(base.eps_coord), q);
  (void)n;
  return std::max(normwise_error(to_double(out.eps_coord), expect_coord),
                  normwise_error(to_double(out.eps_feat), to_double(base.eps_feat)));
}

}  // namespace

TEST(DtnConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), gfm::ContractError);
  c = small_config();
  c.d_trip = 64;
  EXPECT_THROW(c.validate(), gfm::ContractError);
  DtnConfig def;
  EXPECT_EQ(def.n_layers, 5u);
  EXPECT_EQ(def.ff_width(), 1024u);
  EXPECT_EQ(def.trip_width(), 64u);
}

TEST(Embedding, ShapesAtDefaults) {
  DtnConfig c;
  Rng rng(1);
  Dtn<float> net(c, rng);
  auto in = random_inputs(7, c.nf + 2, rng);
  auto e = net.embed_inputs(tensor_of<float>(in.P, {7, 3}), tensor_of<float>(in.H, {7, c.nf + 2}), 3, 10, {});
  EXPECT_EQ(e.e_node.shape(), (gfm::Shape{7, 256}));
  EXPECT_EQ(e.e_pair.shape(), (gfm::Shape{7, 7, 256}));
  EXPECT_EQ(e.e_triplet.shape(), (gfm::Shape{7, 7, 7, 64}));
}

TEST(Embedding, InconsistentInputsRejected) {
  auto c = small_config();
  Rng rng(2);
  Dtn<double> net(c, rng);
  auto P = Tensor<double>::zeros({3, 3});
  EXPECT_THROW(net.embed_inputs(P, Tensor<double>::zeros({4, c.nf + 2}), 1, 10, {}), gfm::ContractError);
  EXPECT_THROW(net.embed_inputs(P, Tensor<double>::zeros({3, c.nf + 1}), 1, 10, {}), gfm::ContractError);
  EXPECT_THROW(net.embed_inputs(P, Tensor<double>::zeros({3, c.nf + 2}), 11, 10, {}), gfm::ContractError);
  EXPECT_THROW(net.embed_inputs(P, Tensor<double>::zeros({3, c.nf + 2}), 1, 10, 0.5), gfm::ContractError);
}

TEST(Embedding, IdenticalAtomsGiveSymmetricEmbeddings) {
  auto c = small_config();
  Rng rng(3);
  Dtn<double> net(c, rng);
  std::vector<double> P{0.7, -0.2, 0.1, -0.7, 0.2, -0.1};
  std::vector<double> H{1, 0, 0, 0.3, 0.5, 1, 0, 0, 0.3, 0.5};
  auto e = net.embed_inputs(tensor_of<double>(P, {2, 3}), tensor_of<double>(H, {2, 5}), 4, 10, {});
  for (std::size_t k = 0; k < c.d_model; ++k) {
    EXPECT_DOUBLE_EQ(e.e_node.at({0, k}), e.e_node.at({1, k}));
    EXPECT_NEAR(e.e_pair.at({0, 1, k}), e.e_pair.at({1, 0, k}), 1e-14);
  }
}

TEST(Embedding, RotationLeavesEmbeddingsUnchanged) {
  auto c = small_config();
  Rng rng(4);
  Dtn<double> net(c, rng);
  auto in = random_inputs(6, c.nf + 2, rng);
  auto q = gfm::testing::random_orthogonal(rng);
  auto H = tensor_of<double>(in.H, {6, 5});
  auto a = net.embed_inputs(tensor_of<double>(in.P, {6, 3}), H, 9, 20, {});
  auto b = net.embed_inputs(tensor_of<double>(gfm::testing::transform_rows(in.P, q), {6, 3}), H, 9, 20, {});
  EXPECT_LT(normwise_error(to_double(b.e_pair), to_double(a.e_pair)), 1e-6);
  EXPECT_LT(normwise_error(to_double(b.e_triplet), to_double(a.e_triplet)), 1e-6);
  EXPECT_EQ(a.masks.attend, b.masks.attend);
}

TEST(AtomPairTrack, SingleAtomIsFinite) {
  auto c = small_config();
  Rng rng(5);
  Dtn<double> net(c, rng);
  auto e = net.embed_inputs(Tensor<double>::zeros({1, 3}), tensor_of<double>({1, 0, 0, 0.2, 0.25}, {1, 5}), 2, 10, {});
  Tensor<double> attn;
  auto out = net.atom_pair_track(0, e, rng, false, &attn);
  for (std::size_t h = 0; h < c.n_heads; ++h) EXPECT_DOUBLE_EQ(attn.at({0, 0, h}), 1.0);
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(AtomPairTrack, HeadRowsSumToOne) {
  auto c = small_config();
  Rng rng(6);
  Dtn<double> net(c, rng);
  auto in = random_inputs(5, 5, rng);
  auto e = net.embed_inputs(tensor_of<double>(in.P, {5, 3}), tensor_of<double>(in.H, {5, 5}), 2, 10, {});
  Tensor<double> attn;
  net.atom_pair_track(0, e, rng, false, &attn);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += attn.at({i, j, h});
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(AtomPairTrack, PermutingAtomsPermutesRows) {
  auto c = small_config();
  Rng rng(7);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(5, 5, rng);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto e = net.embed_inputs(tensor_of<double>(in.P, {5, 3}), tensor_of<double>(in.H, {5, 5}), 2, 10, {});
  auto ep = net.embed_inputs(tensor_of<double>(permute_rows(in.P, perm, 3), {5, 3}),
                             tensor_of<double>(permute_rows(in.H, perm, 5), {5, 5}), 2, 10, {});
  auto a = to_double(net.atom_pair_track(0, e, rng, false));
  auto b = to_double(net.atom_pair_track(0, ep, rng, false));
  EXPECT_LT(normwise_error(b, permute_rows(a, perm, c.d_model)), 1e-12);
}

TEST(PairTripletTrack, TwoAtomsIgnoreTriplets) {
  auto c = small_config();
  Rng rng(8);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto e = net.embed_inputs(tensor_of<double>({0.6, 0, 0, -0.6, 0, 0}, {2, 3}),
                            tensor_of<double>({1, 0, 0, 0.2, 0.25, 0, 1, 0, 0.3, 0.5}, {2, 5}), 2, 10, {});
  Tensor<double> attn;
  auto a = to_double(net.pair_triplet_track(0, e, rng, false, &attn));
  for (double w : attn.values()) EXPECT_EQ(w, 0.0);
  auto other = e;
  std::vector<double> noise(e.e_triplet.numel());
  for (auto& v : noise) v = rng.normal();
  other.e_triplet = tensor_of<double>(noise, e.e_triplet.shape());
  auto b = to_double(net.pair_triplet_track(0, other, rng, false));
  EXPECT_EQ(a, b);
}

TEST(PairTripletTrack, WeightsOverValidThirdAtomsSumToOne) {
  auto c = small_config();
  Rng rng(9);
  Dtn<double> net(c, rng);
  auto in = random_inputs(4, 5, rng);
  auto e = net.embed_inputs(tensor_of<double>(in.P, {4, 3}), tensor_of<double>(in.H, {4, 5}), 2, 10, {});
  auto trip_before = to_double(e.e_triplet);
  Tensor<double> attn;
  net.pair_triplet_track(0, e, rng, false, &attn);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) {
          const double w = attn.at({i, j, k, h});
          if (!e.masks.attend[(i * 4 + j) * 4 + k]) EXPECT_EQ(w, 0.0);
          s += w;
        }
        EXPECT_NEAR(s, i == j ? 0.0 : 1.0, 1e-12);
      }
  EXPECT_EQ(to_double(e.e_triplet), trip_before);
}

TEST(PairTripletTrack, RelabelingOracle) {
  auto c = small_config();
  Rng rng(10);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(4, 5, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  auto e = net.embed_inputs(tensor_of<double>(in.P, {4, 3}), tensor_of<double>(in.H, {4, 5}), 2, 10, {});
  auto ep = net.embed_inputs(tensor_of<double>(permute_rows(in.P, perm, 3), {4, 3}),
                             tensor_of<double>(permute_rows(in.H, perm, 5), {4, 5}), 2, 10, {});
  auto a = net.pair_triplet_track(0, e, rng, false);
  auto b = net.pair_triplet_track(0, ep, rng, false);
  double worst = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < c.d_model; ++k)
        worst = std::max(worst, std::abs(b.at({i, j, k}) - a.at({perm[i], perm[j], k})));
  EXPECT_LT(worst, 1e-12);
}

TEST(Connection, ZeroAtomsGiveLayerNormOfPairs) {
  auto c = small_config();
  Rng rng(11);
  Dtn<double> net(c, rng);
  const std::size_t n = 3, d = c.d_model;
  std::vector<double> pair(n * n * d);
  for (auto& v : pair) v = rng.normal();
  auto out = net.connection_module(0, Tensor<double>::zeros({n, d}), tensor_of<double>(pair, {n, n, d}));
  ASSERT_EQ(out.shape(), (gfm::Shape{n, n, d}));
  for (std::size_t r = 0; r < n * n; ++r) {
    double mu = 0, var = 0;
    for (std::size_t k = 0; k < d; ++k) mu += pair[r * d + k] / d;
    for (std::size_t k = 0; k < d; ++k) var += (pair[r * d + k] - mu) * (pair[r * d + k] - mu) / d;
    for (std::size_t k = 0; k < d; ++k)
      EXPECT_NEAR(out.values()[r * d + k], (pair[r * d + k] - mu) / std::sqrt(var + 1e-5), 1e-9);
  }
}

TEST(Connection, SwappingAtomsPermutesPairs) {
  auto c = small_config();
  Rng rng(12);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  const std::size_t n = 3, d = c.d_model;
  std::vector<double> node(n * d), pair(n * n * d);
  for (auto& v : node) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) pair[(i * n + j) * d + k] = pair[(j * n + i) * d + k] = rng.normal();
  std::vector<std::size_t> perm{1, 0, 2};
  auto a = net.connection_module(0, tensor_of<double>(node, {n, d}), tensor_of<double>(pair, {n, n, d}));
  std::vector<double> node_p = permute_rows(node, perm, d), pair_p(pair.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) pair_p[(i * n + j) * d + k] = pair[(perm[i] * n + perm[j]) * d + k];
  auto b = net.connection_module(0, tensor_of<double>(node_p, {n, d}), tensor_of<double>(pair_p, {n, n, d}));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(b.at({i, j, k}), a.at({perm[i], perm[j], k}), 1e-12);
}

TEST(PositionUpdate, ZeroInitializedHeadKeepsPositions) {
  auto c = small_config();
  Rng rng(13);
  Dtn<double> net(c, rng);
  auto in = random_inputs(5, 5, rng);
  auto P = tensor_of<double>(in.P, {5, 3});
  auto e = net.embed_inputs(P, tensor_of<double>(in.H, {5, 5}), 2, 10, {});
  auto moved = to_double(net.position_update(0, e.e_pair, P));
  for (std::size_t i = 0; i < in.P.size(); ++i) EXPECT_NEAR(moved[i], in.P[i], 1e-15);
}

TEST(PositionUpdate, SymmetricPairMovesAlongAxis) {
  auto c = small_config();
  Rng rng(14);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  std::vector<double> P{0.5, 0.3, -0.2, -0.5, -0.3, 0.2};
  const std::size_t d = c.d_model;
  std::vector<double> pair(4 * d);
  for (std::size_t k = 0; k < d; ++k) {
    pair[k] = pair[3 * d + k] = rng.normal();
    pair[d + k] = pair[2 * d + k] = rng.normal();
  }
  auto moved = to_double(net.position_update(0, tensor_of<double>(pair, {2, 2, d}), tensor_of<double>(P, {2, 3})));
  std::array<double, 3> axis{1.0, 0.6, -0.4}, delta{};
  for (int k = 0; k < 3; ++k) delta[k] = moved[k] - P[k];
  const double cross0 = delta[1] * axis[2] - delta[2] * axis[1];
  const double cross1 = delta[2] * axis[0] - delta[0] * axis[2];
  const double cross2 = delta[0] * axis[1] - delta[1] * axis[0];
  EXPECT_GT(std::abs(delta[0]), 1e-6);
  EXPECT_NEAR(cross0, 0.0, 1e-12);
  EXPECT_NEAR(cross1, 0.0, 1e-12);
  EXPECT_NEAR(cross2, 0.0, 1e-12);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(moved[k] + moved[3 + k], 0.0, 1e-12);
}

TEST(PositionUpdate, RotatesWithInput) {
  auto c = small_config();
  Rng rng(15);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(6, 5, rng);
  auto q = gfm::testing::random_orthogonal(rng);
  auto H = tensor_of<double>(in.H, {6, 5});
  auto P = tensor_of<double>(in.P, {6, 3});
  auto PQ = tensor_of<double>(gfm::testing::transform_rows(in.P, q), {6, 3});
  auto a = to_double(net.position_update(0, net.embed_inputs(P, H, 1, 10, {}).e_pair, P));
  auto b = to_double(net.position_update(0, net.embed_inputs(PQ, H, 1, 10, {}).e_pair, PQ));
  EXPECT_LT(normwise_error(b, gfm::testing::transform_rows(a, q)), 1e-5);
}

TEST(Refresh, InvariantAndMasksPersist) {
  auto c = small_config();
  Rng rng(16);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(5, 5, rng);
  auto e = net.embed_inputs(tensor_of<double>(in.P, {5, 3}), tensor_of<double>(in.H, {5, 5}), 2, 10, {});
  auto moved = gfm::testing::random_spaced_cloud(5, rng, 0.8, 1.2);
  auto q = gfm::testing::random_orthogonal(rng);
  auto a = net.refresh_geometry(0, e, tensor_of<double>(moved, {5, 3}));
  auto b = net.refresh_geometry(0, e, tensor_of<double>(gfm::testing::transform_rows(moved, q, {1, -2, 3}), {5, 3}));
  EXPECT_EQ(a.e_pair.shape(), e.e_pair.shape());
  EXPECT_EQ(a.e_triplet.shape(), e.e_triplet.shape());
  EXPECT_LT(normwise_error(to_double(b.e_pair), to_double(a.e_pair)), 1e-10);
  EXPECT_LT(normwise_error(to_double(b.e_triplet), to_double(a.e_triplet)), 1e-10);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(a.masks.valid[(i * 5 + i) * 5 + k], 0);
      EXPECT_EQ(a.masks.valid[(i * 5 + k) * 5 + i], 0);
      EXPECT_EQ(a.masks.valid[(k * 5 + i) * 5 + i], 0);
    }
  moved[3] = moved[0], moved[4] = moved[1], moved[5] = moved[2];
  auto merged = net.refresh_geometry(0, e, tensor_of<double>(moved, {5, 3}));
  EXPECT_EQ(merged.masks.valid[(0 * 5 + 1) * 5 + 2], 0);
  EXPECT_EQ(merged.masks.valid[(1 * 5 + 2) * 5 + 0], 0);
  EXPECT_THROW(net.refresh_geometry(1, e, tensor_of<double>(moved, {5, 3})), gfm::ContractError);
}

TEST(Forward, OutputShapesAndZeroCom) {
  auto c = small_config();
  Rng rng(17);
  Dtn<float> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(9, 5, rng);
  auto out = run(net, in);
  EXPECT_EQ(out.eps_coord.shape(), (gfm::Shape{9, 3}));
  EXPECT_EQ(out.eps_feat.shape(), (gfm::Shape{9, 5}));
  for (int k = 0; k < 3; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < 9; ++i) s += out.eps_coord.at({i, static_cast<std::size_t>(k)});
    EXPECT_LT(std::abs(s), 1e-6);
  }
}

TEST(Forward, EquivariantUnderRigidMotion) {
  auto c = small_config(3);
  Rng rng(18);
  Dtn<double> net64(c, rng);
  Rng rng32(18);
  Dtn<float> net32(c, rng32);
  Rng pr(99), pr32(99);
  gfm::testing::randomize_parameters(net64.parameters(), pr);
  gfm::testing::randomize_parameters(net32.parameters(), pr32);
  for (int trial = 0; trial < 4; ++trial) {
    auto in = random_inputs(4 + 2 * trial, 5, rng);
    EXPECT_LT(equivariance_error(net64, in, rng), 1e-9);
    EXPECT_LT(equivariance_error(net32, in, rng), 1e-5);
  }
}

TEST(Forward, PermutationEquivariant) {
  auto c = small_config();
  Rng rng(19);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(6, 5, rng);
  std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  auto a = run(net, in);
  Inputs p{permute_rows(in.P, perm, 3), permute_rows(in.H, perm, 5)};
  auto b = run(net, p);
  EXPECT_LT(normwise_error(to_double(b.eps_coord), permute_rows(to_double(a.eps_coord), perm, 3)), 1e-12);
  EXPECT_LT(normwise_error(to_double(b.eps_feat), permute_rows(to_double(a.eps_feat), perm, 5)), 1e-12);
}

TEST(Forward, UntrainedNetworkPredictsNoCoordinateNoise) {
  auto c = small_config();
  Rng rng(20);
  Dtn<double> net(c, rng);
  auto in = random_inputs(5, 5, rng);
  for (double v : run(net, in).eps_coord.values()) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Forward, EvalModeIsDeterministicTrainingModeDrawsDropout) {
  auto c = small_config();
  Rng rng(21);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(5, 5, rng);
  auto P = tensor_of<double>(in.P, {5, 3});
  auto H = tensor_of<double>(in.H, {5, 5});
  Rng r1(1), r2(2);
  auto a = to_double(net.predict(P, H, 3, 10, {}, r1, false).eps_feat);
  auto b = to_double(net.predict(P, H, 3, 10, {}, r2, false).eps_feat);
  EXPECT_EQ(a, b);
  auto d = to_double(net.predict(P, H, 3, 10, {}, r1, true).eps_feat);
  EXPECT_NE(a, d);
}

TEST(Forward, ContextEntersConditionalModelOnly) {
  auto c = small_config();
  c.conditioning_dim = 1;
  Rng rng(22);
  Dtn<double> net(c, rng);
  auto in = random_inputs(4, 5, rng);
  auto a = to_double(run(net, in, 5, -1.0).eps_feat);
  auto b = to_double(run(net, in, 5, 1.0).eps_feat);
  EXPECT_GT(normwise_error(a, b), 1e-6);
  EXPECT_THROW(run(net, in, 5), gfm::ContractError);
}

TEST(Forward, EveryParameterReceivesGradient) {
  auto c = small_config(3);
  c.conditioning_dim = 1;
  Rng rng(23);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(5, 5, rng);
  Rng drop(1);
  auto out = net.predict(tensor_of<double>(in.P, {5, 3}), tensor_of<double>(in.H, {5, 5}), 7, 20, 0.3, drop, false);
  auto loss = gfm::sum(gfm::square(gfm::add_scalar(out.eps_coord, 0.3))) +
              gfm::sum(gfm::square(gfm::add_scalar(out.eps_feat, -0.2)));
  net.parameters().zero_grad();
  gfm::backward(loss);
  for (const auto& p : net.parameters().all()) {
    double g = 0;
    for (double v : p.tensor.grad()) g = std::max(g, std::abs(v));
    EXPECT_GT(g, 1e-8) << p.name;
  }
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  DtnConfig c = small_config(2, 8);
  c.d_trip = 4;
  c.n_heads = 2;
  c.rbf.n_bases = 4;
  Rng rng(24);
  Dtn<double> net(c, rng);
  gfm::testing::randomize_parameters(net.parameters(), rng);
  auto in = random_inputs(4, 5, rng);
  auto P = tensor_of<double>(in.P, {4, 3});
  auto H = tensor_of<double>(in.H, {4, 5});
  auto f = [&] {
    Rng r(0);
    auto out = net.predict(P, H, 6, 20, {}, r, false);
    return gfm::sum(gfm::square(gfm::add_scalar(out.eps_coord, 0.1))) + gfm::sum(gfm::square(out.eps_feat));
  };
  net.parameters().zero_grad();
  gfm::backward(f());
  double worst = 0;
  for (const auto& p : net.parameters().all()) {
    auto numeric = gfm::testing::numeric_gradient(p.tensor, [&] { return f().item(); }, 1e-5);
    worst = std::max(worst, gfm::testing::scaled_relative_error(p.tensor.grad(), numeric));
  }
  EXPECT_LT(worst, 1e-4);
}
