#pragma once

// Noise schedules, forward noising of (coordinates, features), the
// noise-prediction objective with the geometric valency term, and the
// ancestral sampler.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfmdiff/bonds.hpp"
#include "gfmdiff/elements.hpp"
#include "gfmdiff/gfloss.hpp"
#include "gfmdiff/ops.hpp"
#include "gfmdiff/random.hpp"

namespace gfm {

enum class ScheduleKind { kCosine, kPolynomial };

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "polynomial") return ScheduleKind::kPolynomial;
  throw std::invalid_argument("unknown schedule kind '" + s + "' (expected cosine or polynomial)");
}

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::kCosine ? "cosine" : "polynomial"; }

enum class PosteriorVariance {
  kStandard,  // (1 - abar[t-1]) / (1 - abar[t]) * beta[t]
  kBetaRatio,     // (beta[t] - beta[t-1]) beta[t-1] / ((1 - beta[t-1]) beta[t]), floored
};

inline PosteriorVariance parse_posterior_variance(const std::string& s) {
  if (s == "standard") return PosteriorVariance::kStandard;
  if (s == "beta_ratio") return PosteriorVariance::kBetaRatio;
  throw std::invalid_argument("unknown posterior variance '" + s + "' (expected standard or beta_ratio)");
}

inline std::string to_string(PosteriorVariance v) { return v == PosteriorVariance::kStandard ? "standard" : "beta_ratio"; }

inline constexpr double kAlphaBarClip = 1e-5;
inline constexpr double kSigma2Floor = 1e-12;

// Arrays are indexed by t = 0..T; t = 0 is the nearly clean end.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::kCosine;
  PosteriorVariance variance = PosteriorVariance::kStandard;
  std::size_t T = 0;
  std::vector<double> beta, alpha, alpha_bar, snr, sigma2;

  // Loss weight 1 - SNR(t)/SNR(t-1), t >= 1.
  double omega(std::size_t t) const {
    check(t);
    if (t == 0) throw std::out_of_range("loss weight is defined for t >= 1");
    return 1.0 - snr[t] / snr[t - 1];
  }

  void check(std::size_t t) const {
    if (t > T) throw std::out_of_range("time step " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  }
};

// Raw cumulative signal level in [0, 1] at fraction s = t/T.
inline double raw_alpha_bar(ScheduleKind kind, double s) {
  if (kind == ScheduleKind::kCosine) {
    constexpr double offset = 0.008;
    auto f = [](double x) {
      const double c = std::cos((x + offset) / (1 + offset) * std::numbers::pi / 2);
      return c * c;
    };
    return std::max(0.0, f(s) / f(0.0));
  }
  const double u = 1.0 - s * s;
  return u * u;
}

inline NoiseSchedule build_schedule(ScheduleKind kind, std::size_t T,
                                    PosteriorVariance variance = PosteriorVariance::kStandard) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
  NoiseSchedule s;
  s.kind = kind;
  s.variance = variance;
  s.T = T;
  s.alpha_bar.resize(T + 1);
  // Affine map of [0, 1] onto [clip, 1 - clip] keeps the sequence strictly decreasing.
  for (std::size_t t = 0; t <= T; ++t) {
    const double raw = raw_alpha_bar(kind, static_cast<double>(t) / static_cast<double>(T));
    s.alpha_bar[t] = kAlphaBarClip + (1.0 - 2.0 * kAlphaBarClip) * raw;
  }
  s.alpha.resize(T + 1);
  s.beta.resize(T + 1);
  s.snr.resize(T + 1);
  s.sigma2.resize(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    s.alpha[t] = t == 0 ? s.alpha_bar[0] : s.alpha_bar[t] / s.alpha_bar[t - 1];
    s.beta[t] = 1.0 - s.alpha[t];
    s.snr[t] = s.alpha_bar[t] / (1.0 - s.alpha_bar[t]);
  }
  s.sigma2[0] = s.beta[0];
  for (std::size_t t = 1; t <= T; ++t) {
    if (variance == PosteriorVariance::kStandard) {
      s.sigma2[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    } else {
      const double b = s.beta[t], bp = s.beta[t - 1];
      s.sigma2[t] = std::max(kSigma2Floor, (b - bp) * bp / ((1.0 - bp) * b));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Molecule state

// Per-channel scale factors applied before diffusion.
struct FeatureScaling {
  std::size_t nf = 0;
  double x_scale = 0.25;
  int max_atomic_number = 1;
  int max_valency = 1;

  std::size_t width() const { return nf + 2; }

  static FeatureScaling for_elements(const ElementSet& elements, const ValenceTable& valence = {}) {
    FeatureScaling f;
    f.nf = elements.size();
    f.max_atomic_number = elements.max_atomic_number();
    f.max_valency = 1;
    for (const auto& s : elements.symbols()) f.max_valency = std::max(f.max_valency, *valence.valences(s).rbegin());
    return f;
  }
};

// P: N x 3 (zero CoM); H: N x (nf + 2) laid out as [X | A | V], all scaled.
struct MoleculeState {
  std::size_t n = 0;
  std::size_t width = 0;
  std::vector<double> P;
  std::vector<double> H;
  std::vector<unsigned char> mask;  // 1 = real atom

  std::size_t nf() const { return width - 2; }
};

inline void center_in_place(std::vector<double>& P, const std::vector<unsigned char>& mask = {}) {
  const std::size_t n = P.size() / 3;
  double com[3] = {0, 0, 0};
  std::size_t live = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    ++live;
    for (int c = 0; c < 3; ++c) com[c] += P[3 * i + c];
  }
  if (live == 0) return;
  for (double& c : com) c /= static_cast<double>(live);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (int c = 0; c < 3; ++c) P[3 * i + c] -= com[c];
  }
}

inline MoleculeState encode_state(const std::vector<std::string>& symbols,
                                  const std::vector<std::array<double, 3>>& coords, const std::vector<int>& valencies,
                                  const ElementSet& elements, const FeatureScaling& scaling) {
  const std::size_t n = symbols.size();
  if (coords.size() != n || valencies.size() != n) throw ContractError("symbols, coordinates and valencies differ in length");
  MoleculeState s;
  s.n = n;
  s.width = scaling.width();
  s.mask.assign(n, 1);
  s.H.assign(n * s.width, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) s.P.push_back(coords[i][c]);
    const auto k = elements.index(symbols[i]);
    s.H[i * s.width + k] = scaling.x_scale;
    s.H[i * s.width + scaling.nf] = static_cast<double>(elements.atomic_number(k)) / scaling.max_atomic_number;
    s.H[i * s.width + scaling.nf + 1] = static_cast<double>(valencies[i]) / scaling.max_valency;
  }
  center_in_place(s.P);
  return s;
}

struct DecodedMolecule {
  std::vector<std::string> symbols;
  std::vector<std::array<double, 3>> coords;
  std::vector<int> atomic_numbers;
  std::vector<int> valencies;
};

// Type from the argmax of X (ties to the lowest index); A snaps to that
// element's atomic number; V is rounded and clipped to [0, max_valency].
inline DecodedMolecule decode_state(const MoleculeState& s, const ElementSet& elements, const FeatureScaling& scaling) {
  DecodedMolecule m;
  for (std::size_t i = 0; i < s.n; ++i) {
    if (!s.mask.empty() && !s.mask[i]) continue;
    std::size_t best = 0;
    for (std::size_t k = 1; k < scaling.nf; ++k) {
      if (s.H[i * s.width + k] > s.H[i * s.width + best]) best = k;
    }
    m.symbols.push_back(elements.symbol(best));
    m.atomic_numbers.push_back(elements.atomic_number(best));
    const double v = s.H[i * s.width + scaling.nf + 1] * scaling.max_valency;
    m.valencies.push_back(static_cast<int>(std::clamp(std::lround(v), 0L, static_cast<long>(scaling.max_valency))));
    m.coords.push_back({s.P[3 * i], s.P[3 * i + 1], s.P[3 * i + 2]});
  }
  return m;
}

struct NoiseRecord {
  std::vector<double> P;  // zero-CoM
  std::vector<double> H;
};

inline NoiseRecord draw_noise(std::size_t n, std::size_t width, Rng& rng, const std::vector<unsigned char>& mask = {}) {
  NoiseRecord e;
  e.P.resize(n * 3);
  e.H.resize(n * width);
  for (auto& x : e.P) x = rng.normal();
  for (auto& x : e.H) x = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.empty() || mask[i]) continue;
    for (int c = 0; c < 3; ++c) e.P[3 * i + c] = 0.0;
    for (std::size_t k = 0; k < width; ++k) e.H[i * width + k] = 0.0;
  }
  center_in_place(e.P, mask);
  return e;
}

struct NoisedState {
  MoleculeState state;
  NoiseRecord eps;
};

inline NoisedState forward_noise(const MoleculeState& g0, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
  schedule.check(t);
  NoisedState out;
  out.eps = draw_noise(g0.n, g0.width, rng, g0.mask);
  out.state = g0;
  const double a = std::sqrt(schedule.alpha_bar[t]), b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  for (std::size_t k = 0; k < g0.P.size(); ++k) out.state.P[k] = a * g0.P[k] + b * out.eps.P[k];
  for (std::size_t k = 0; k < g0.H.size(); ++k) out.state.H[k] = a * g0.H[k] + b * out.eps.H[k];
  return out;
}

// One step of the stepwise kernel q(G_t | G_{t-1}).
inline MoleculeState forward_step(const MoleculeState& prev, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
  schedule.check(t);
  const auto eps = draw_noise(prev.n, prev.width, rng, prev.mask);
  MoleculeState s = prev;
  const double a = std::sqrt(schedule.alpha[t]), b = std::sqrt(schedule.beta[t]);
  for (std::size_t k = 0; k < s.P.size(); ++k) s.P[k] = a * prev.P[k] + b * eps.P[k];
  for (std::size_t k = 0; k < s.H.size(); ++k) s.H[k] = a * prev.H[k] + b * eps.H[k];
  return s;
}

inline MoleculeState reconstruct_clean(const MoleculeState& gt, const NoiseRecord& eps_hat, std::size_t t,
                                       const NoiseSchedule& schedule) {
  schedule.check(t);
  MoleculeState s = gt;
  const double a = std::sqrt(schedule.alpha_bar[t]), b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  for (std::size_t k = 0; k < s.P.size(); ++k) s.P[k] = (gt.P[k] - b * eps_hat.P[k]) / a;
  for (std::size_t k = 0; k < s.H.size(); ++k) s.H[k] = (gt.H[k] - b * eps_hat.H[k]) / a;
  center_in_place(s.P, s.mask);
  return s;
}

// ---------------------------------------------------------------------------
// Denoiser interface

template <class T>
struct DenoiserOutput {
  Tensor<T> eps_coord;  // N x 3
  Tensor<T> eps_feat;   // N x (nf + 2)
};

template <class T>
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // P: N x 3, H: N x (nf + 2); context is the standardized property value.
  virtual DenoiserOutput<T> predict(const Tensor<T>& P, const Tensor<T>& H, std::size_t t, std::size_t T_steps,
                                    std::optional<double> context, Rng& rng, bool training) = 0;
};

template <class T>
Tensor<T> to_tensor(const std::vector<double>& v, Shape shape) {
  return Tensor<T>(std::move(shape), std::vector<T>(v.begin(), v.end()));
}

struct LossOptions {
  double lambda = 0.01;
  GfWeightMode weight_mode = GfWeightMode::kSqrtAlphaBar;
  ValencyMode valency_mode = ValencyMode::kOrderWeighted;
  BondOrderRule bond_rule = BondOrderRule::kArgminMargin;
  double type_temperature = 0.1;
};

inline double gf_weight(const NoiseSchedule& s, std::size_t t, GfWeightMode mode) {
  return mode == GfWeightMode::kSqrtAlphaBar ? std::sqrt(s.alpha_bar[t]) : s.alpha[t];
}

template <class T>
struct LossTerms {
  Tensor<T> total;  // differentiable
  double mse = 0;   // ||eps - eps_hat||^2
  double gf = 0;    // geometric valency term (reported even when lambda = 0)
  double omega = 0;
};

// Loss from a given prediction; split out so it can be checked without a network.
template <class T>
LossTerms<T> assemble_loss(const DenoiserOutput<T>& out, const NoisedState& noised, const std::vector<double>& v_true,
                           std::size_t t, const NoiseSchedule& schedule, const BondTable& table,
                           const FeatureScaling& scaling, const LossOptions& opt) {
  const auto& gt = noised.state;
  const std::size_t n = gt.n, w = gt.width, nf = scaling.nf;
  if (out.eps_coord.shape() != Shape{n, 3} || out.eps_feat.shape() != Shape{n, w}) {
    throw ShapeError("denoiser output shapes " + shape_str(out.eps_coord.shape()) + ", " +
                     shape_str(out.eps_feat.shape()) + " do not match state of " + std::to_string(n) + " atoms");
  }
  std::vector<T> keep(n, T{1});
  for (std::size_t i = 0; i < n; ++i) keep[i] = gt.mask.empty() || gt.mask[i] ? T{1} : T{0};
  auto keep_col = constant<T>({n, 1}, keep);
  auto dp = (out.eps_coord - to_tensor<T>(noised.eps.P, {n, 3})) * keep_col;
  auto dh = (out.eps_feat - to_tensor<T>(noised.eps.H, {n, w})) * keep_col;
  auto mse = sum(square(dp)) + sum(square(dh));

  // Clean estimate: coordinates as plain values (bond decision), types differentiable.
  const double ab = schedule.alpha_bar[t];
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> p0(n * 3);
  {
    const auto ec = out.eps_coord.values();
    for (std::size_t k = 0; k < n * 3; ++k) p0[k] = (gt.P[k] - b * static_cast<double>(ec[k])) / a;
    center_in_place(p0, gt.mask);
  }
  std::vector<double> xt(n * nf);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < nf; ++k) xt[i * nf + k] = gt.H[i * w + k];
  auto x0 = scale(to_tensor<T>(xt, {n, nf}) - scale(narrow(out.eps_feat, 1, 0, nf), static_cast<T>(b)),
                  static_cast<T>(1.0 / a));
  auto logits = scale(x0, static_cast<T>(1.0 / (scaling.x_scale * opt.type_temperature)));
  const auto decision = decide_bonds(bond_margins(p0, table), opt.bond_rule);
  auto v_pred = predicted_valencies(pair_type_probs(atom_type_probs(logits)), decision, opt.valency_mode);
  auto gf = gf_loss(v_pred, v_true, gf_weight(schedule, t, opt.weight_mode), gt.mask);

  LossTerms<T> r;
  r.omega = schedule.omega(t);
  r.mse = static_cast<double>(mse.item());
  r.gf = static_cast<double>(gf.item());
  auto inner = opt.lambda != 0.0 ? mse + scale(gf, static_cast<T>(opt.lambda)) : mse;
  r.total = scale(inner, static_cast<T>(0.5 * r.omega));
  return r;
}

template <class T>
LossTerms<T> training_loss(Denoiser<T>& model, const MoleculeState& g0, const std::vector<double>& v_true,
                           std::size_t t, std::optional<double> context, const NoiseSchedule& schedule,
                           const BondTable& table, const FeatureScaling& scaling, const LossOptions& opt, Rng& rng,
                           bool training = true) {
  if (t < 1 || t > schedule.T) throw std::out_of_range("training time step must be in [1, T]");
  auto noised = forward_noise(g0, t, schedule, rng);
  auto out = model.predict(to_tensor<T>(noised.state.P, {g0.n, 3}), to_tensor<T>(noised.state.H, {g0.n, g0.width}), t,
                           schedule.T, context, rng, training);
  return assemble_loss(out, noised, v_true, t, schedule, table, scaling, opt);
}

// ---------------------------------------------------------------------------
// Sampler

struct SampleResult {
  MoleculeState state;               // t = 0
  std::vector<MoleculeState> frames;  // every k-th step from T down to 0, when requested
};

// One ancestral update x_t -> x_{t-1} given predicted noise and a standard
// normal draw z (already zero-CoM for coordinates).
inline void reverse_step(MoleculeState& s, const NoiseRecord& eps_hat, const NoiseRecord& z, std::size_t t,
                         const NoiseSchedule& schedule) {
  const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
  const double inv = 1.0 / std::sqrt(schedule.alpha[t]);
  const double sd = t > 1 ? std::sqrt(schedule.sigma2[t]) : 0.0;
  for (std::size_t k = 0; k < s.P.size(); ++k) s.P[k] = inv * (s.P[k] - coef * eps_hat.P[k]) + sd * z.P[k];
  for (std::size_t k = 0; k < s.H.size(); ++k) s.H[k] = inv * (s.H[k] - coef * eps_hat.H[k]) + sd * z.H[k];
  center_in_place(s.P, s.mask);
}

template <class T>
SampleResult sample(Denoiser<T>& model, std::size_t n, std::size_t width, std::optional<double> context,
                    const NoiseSchedule& schedule, Rng& rng, std::size_t trajectory_every = 0) {
  NoGradGuard no_grad;
  SampleResult r;
  auto init = draw_noise(n, width, rng);
  r.state.n = n;
  r.state.width = width;
  r.state.mask.assign(n, 1);
  r.state.P = init.P;
  r.state.H = init.H;
  auto record = [&](std::size_t t) {
    if (trajectory_every > 0 && t % trajectory_every == 0) r.frames.push_back(r.state);
  };
  record(schedule.T);
  for (std::size_t t = schedule.T; t >= 1; --t) {
    auto out = model.predict(to_tensor<T>(r.state.P, {n, 3}), to_tensor<T>(r.state.H, {n, width}), t, schedule.T,
                             context, rng, false);
    NoiseRecord eps_hat{std::vector<double>(out.eps_coord.values().begin(), out.eps_coord.values().end()),
                        std::vector<double>(out.eps_feat.values().begin(), out.eps_feat.values().end())};
    NoiseRecord z = t > 1 ? draw_noise(n, width, rng) : NoiseRecord{std::vector<double>(n * 3, 0.0),
                                                                    std::vector<double>(n * width, 0.0)};
    reverse_step(r.state, eps_hat, z, t, schedule);
    record(t - 1);
  }
  return r;
}

}  // namespace gfm
