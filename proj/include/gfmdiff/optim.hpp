#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gfmdiff/nn.hpp"

namespace gfm {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are indexed like store.all().
template <class T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamOptions opts) : store_(&store), opts_(opts) {
    for (const auto& p : store.all()) {
      m_.emplace_back(p.tensor.numel(), T{0});
      v_.emplace_back(p.tensor.numel(), T{0});
    }
  }

  void step() {
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    auto& params = store_->all();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T> t = params[k].tensor;
      if (!t.has_grad()) continue;
      auto vals = t.mutable_values();
      const auto g = t.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double m = opts_.beta1 * static_cast<double>(m_[k][i]) + (1.0 - opts_.beta1) * gi;
        const double v = opts_.beta2 * static_cast<double>(v_[k][i]) + (1.0 - opts_.beta2) * gi * gi;
        m_[k][i] = static_cast<T>(m);
        v_[k][i] = static_cast<T>(v);
        const double update = opts_.learning_rate * (m / c1) / (std::sqrt(v / c2) + opts_.epsilon);
        vals[i] = static_cast<T>(static_cast<double>(vals[i]) - update);
      }
    }
  }

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  void set_learning_rate(double lr) { opts_.learning_rate = lr; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const AdamOptions& options() const { return opts_; }

 private:
  ParameterStore<T>* store_;
  AdamOptions opts_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t step_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  double total = 0.0;
  for (const auto& p : store.all()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto p : store.all()) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

// Exponential moving average of parameter values.
template <class T>
class ParameterEma {
 public:
  ParameterEma(const ParameterStore<T>& store, double decay) : decay_(decay) {
    for (const auto& p : store.all()) shadow_.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }

  void update(const ParameterStore<T>& store) {
    const auto& params = store.all();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto v = params[k].tensor.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        shadow_[k][i] = static_cast<T>(decay_ * static_cast<double>(shadow_[k][i]) +
                                       (1.0 - decay_) * static_cast<double>(v[i]));
      }
    }
  }

  // Overwrites the store's values with the averaged ones.
  void copy_to(ParameterStore<T>& store) const {
    auto& params = store.all();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T> t = params[k].tensor;
      auto v = t.mutable_values();
      std::copy(shadow_[k].begin(), shadow_[k].end(), v.begin());
    }
  }

  std::vector<std::vector<T>>& shadow() { return shadow_; }
  const std::vector<std::vector<T>>& shadow() const { return shadow_; }

 private:
  double decay_;
  std::vector<std::vector<T>> shadow_;
};

}  // namespace gfm
