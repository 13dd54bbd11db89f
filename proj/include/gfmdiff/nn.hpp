#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "gfmdiff/ops.hpp"
#include "gfmdiff/random.hpp"
#include "gfmdiff/tensor.hpp"

namespace gfm {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

// Owns every learned tensor of a model, keyed by a dotted path name.
template <class T>
class ParameterStore {
 public:
  Tensor<T> create(const std::string& name, Shape shape, std::vector<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Tensor<T> t(std::move(shape), std::move(init), /*requires_grad=*/true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
  }

  const std::vector<Parameter<T>>& all() const { return params_; }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

enum class Init { kXavier, kZeros };

template <class T>
std::vector<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> w(fan_in * fan_out);
  for (auto& v : w) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  return w;
}

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true, Init init = Init::kXavier)
      : in_(in), out_(out) {
    std::vector<T> w = init == Init::kZeros ? std::vector<T>(in * out, T{0}) : xavier_uniform<T>(in, out, rng);
    weight_ = store.create(name + ".weight", {in, out}, std::move(w));
    if (with_bias) bias_ = store.create(name + ".bias", {out}, std::vector<T>(out, T{0}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  // Without a bias the shift stays fixed at zero and is not a parameter.
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t width, bool with_bias = true) {
    gain_ = store.create(name + ".gain", {width}, std::vector<T>(width, T{1}));
    bias_ = with_bias ? store.create(name + ".bias", {width}, std::vector<T>(width, T{0}))
                      : Tensor<T>::zeros({width});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain_, bias_); }

 private:
  Tensor<T> gain_, bias_;
};

// Linear -> SiLU -> dropout -> Linear.
template <class T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng)
      : up_(store, name + ".up", width, hidden, rng), down_(store, name + ".down", hidden, width, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, double rate, Rng& rng, bool training) const {
    return down_(dropout(silu(up_(x)), rate, rng, training));
  }

 private:
  Linear<T> up_, down_;
};

}  // namespace gfm
