#pragma once

// Differentiable primitives over Tensor<T>. Binary elementwise ops follow
// numpy broadcasting; reductions and normalizations take an explicit axis.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "gfmdiff/random.hpp"
#include "gfmdiff/tensor.hpp"

namespace gfm {

namespace detail {

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ia = i + a.size() - r;  // wraps when i < r - a.size()
    const std::size_t ib = i + b.size() - r;
    const bool has_a = i + a.size() >= r;
    const bool has_b = i + b.size() >= r;
    const std::size_t da = has_a ? a[ia] : 1;
    const std::size_t db = has_b ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    p.stride_a[i] = (has_a && da != 1) ? sa[ia] : 0;
    p.stride_b[i] = (has_b && db != 1) ? sb[ib] : 0;
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void broadcast_loop(const BroadcastPlan& p, F&& f) {
  const std::size_t total = shape_numel(p.out);
  if (total == 0) return;
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  const std::size_t inner = p.out[r - 1];
  const std::size_t step_a = p.stride_a[r - 1];
  const std::size_t step_b = p.stride_b[r - 1];
  std::size_t o = 0, ao = 0, bo = 0;
  while (o < total) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ao + k * step_a, bo + k * step_b);
    o += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ao += p.stride_a[d];
      bo += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ao -= p.stride_a[d] * p.out[d];
      bo -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <class T, class Fwd, class Da, class Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Da da, Db db) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<T> out(shape_numel(plan.out));
  const auto av = a.values();
  const auto bv = b.values();
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  Shape out_shape = plan.out;
  return make_result<T>(std::move(out_shape), std::move(out), {a, b}, [plan, da, db](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    const auto& avv = pa.value;
    const auto& bvv = pb.value;
    if (pa.requires_grad) {
      broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { pa.grad[i] += da(g[o], avv[i], bvv[j]); });
    }
    if (pb.requires_grad) {
      broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { pb.grad[j] += db(g[o], avv[i], bvv[j]); });
    }
  });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(a.shape(), std::move(out), {a}, [deriv](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> constant(Shape shape, std::vector<T> values) {
  return Tensor<T>(std::move(shape), std::move(values), false);
}

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), std::vector<T>(x.values().begin(), x.values().end()), false);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary_op(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op(a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T{-1});
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// sqrt over max(x, 0); the derivative evaluates at max(x, floor) so points on
// the domain boundary produce finite gradients.
template <class T>
Tensor<T> sqrt(const Tensor<T>& a, T floor = T(1e-12)) {
  return detail::unary_op(
      a, [](T x) { return std::sqrt(std::max(x, T{0})); },
      [floor](T x, T) { return T{0.5} / std::sqrt(std::max(x, floor)); });
}

inline constexpr double kArccosClamp = 1e-7;

// arccos with the input clamped to [-1 + 1e-7, 1 - 1e-7]; derivative taken at
// the clamped value.
template <class T>
Tensor<T> arccos(const Tensor<T>& a) {
  auto clamp = [](T x) {
    const T lo = T(-1.0 + kArccosClamp);
    const T hi = T(1.0 - kArccosClamp);
    return std::min(std::max(x, lo), hi);
  };
  return detail::unary_op(
      a, [clamp](T x) { return std::acos(clamp(x)); },
      [clamp](T x, T) {
        const T c = clamp(x);
        return T{-1} / std::sqrt(T{1} - c * c);
      });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x / (T{1} + std::exp(-x)); },
      [](T x, T) {
        const T s = T{1} / (T{1} + std::exp(-x));
        return s * (T{1} + x * (T{1} - s));
      });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.values()) acc += v;
  return make_result<T>(Shape{}, {acc}, {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    const T g = self.grad[0];
    for (auto& x : p.grad) x += g;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim = false) {
  const auto ax = detail::normalize_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<T> out(sp.outer * sp.inner, T{0});
  const auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.len; ++k) {
      const T* src = av.data() + (o * sp.len + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a}, [sp](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t k = 0; k < sp.len; ++k) {
        T* dst = p.grad.data() + (o * sp.len + k) * sp.inner;
        const T* g = self.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim = false) {
  const auto ax = detail::normalize_axis(axis, a.rank());
  return scale(sum(a, axis, keepdim), T{1} / static_cast<T>(a.dim(ax)));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return make_result<T>(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()), {a},
                        [](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                        });
}

template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const auto& in = a.shape();
  if (axes.size() != in.size()) throw ShapeError("permute axes do not match rank of " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  const auto in_strides = detail::contiguous_strides(in);
  std::vector<std::size_t> src_strides(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || seen[axes[i]]) throw ShapeError("invalid permutation for " + shape_str(in));
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Reuse the broadcast walker: "a" walks the output contiguously, "b" the source.
  detail::BroadcastPlan plan;
  plan.out = out_shape;
  plan.stride_a = detail::contiguous_strides(out_shape);
  plan.stride_b = src_strides;
  std::vector<T> out(a.numel());
  const auto av = a.values();
  detail::broadcast_loop(plan, [&](std::size_t o, std::size_t, std::size_t s) { out[o] = av[s]; });
  return make_result<T>(std::move(out_shape), std::move(out), {a}, [plan](Node<T>& self) {
    auto& p = *self.parents[0];
    detail::broadcast_loop(plan, [&](std::size_t o, std::size_t, std::size_t s) { p.grad[s] += self.grad[o]; });
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const auto ax = detail::normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch: " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != parts[0].shape()[d]) {
        throw ShapeError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
      }
    }
    out_shape[ax] += s[ax];
  }
  const auto sp = detail::split_at(out_shape, ax);
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * sp.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(pv.begin() + static_cast<std::ptrdiff_t>(o * w), pv.begin() + static_cast<std::ptrdiff_t>((o + 1) * w),
                out.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
    }
    widths.push_back(w);
    offset += w;
  }
  const std::size_t row = sp.len * sp.inner;
  return make_result<T>(std::move(out_shape), std::move(out), parts, [sp, widths, row](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* g = self.grad.data() + o * row + off;
          T* dst = p.grad.data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += g[i];
        }
      }
      off += widths[k];
    }
  });
}

// Entries [start, start + len) along one axis.
template <class T>
Tensor<T> narrow(const Tensor<T>& a, int axis, std::size_t start, std::size_t len) {
  const auto ax = detail::normalize_axis(axis, a.rank());
  if (start + len > a.dim(ax)) {
    throw ShapeError("narrow [" + std::to_string(start) + ", " + std::to_string(start + len) + ") out of range for " +
                     shape_str(a.shape()));
  }
  const auto sp = detail::split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = len;
  std::vector<T> out(sp.outer * len * sp.inner);
  const auto av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.data() + (o * sp.len + start) * sp.inner, len * sp.inner, out.data() + o * len * sp.inner);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a}, [sp, start, len](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* g = self.grad.data() + o * len * sp.inner;
      T* dst = p.grad.data() + (o * sp.len + start) * sp.inner;
      for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T x = av[i * k + p];
      const T* brow = bv.data() + p * n;
      T* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  return make_result<T>(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb.value[p * n + j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T x = pa.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += x * g[i * n + j];
        }
    }
  });
}

// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear dimension mismatch: " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), outd = weight.dim(1);
  const std::size_t rows = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != outd)) {
    throw ShapeError("linear bias shape " + shape_str(bias.shape()) + " for output width " + std::to_string(outd));
  }
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  std::vector<T> out(rows * outd, T{0});
  const auto xv = x.values();
  const auto wv = weight.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T* orow = out.data() + r * outd;
    for (std::size_t p = 0; p < in; ++p) {
      const T v = xv[r * in + p];
      if (v == T{0}) continue;
      const T* wrow = wv.data() + p * outd;
      for (std::size_t j = 0; j < outd; ++j) orow[j] += v * wrow[j];
    }
    if (has_bias) {
      const auto bv = bias.values();
      for (std::size_t j = 0; j < outd; ++j) orow[j] += bv[j];
    }
  }
  std::vector<Tensor<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents),
                        [rows, in, outd, has_bias](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pw = *self.parents[1];
                          const auto& g = self.grad;
                          if (px.requires_grad) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* grow = g.data() + r * outd;
                              for (std::size_t p = 0; p < in; ++p) {
                                const T* wrow = pw.value.data() + p * outd;
                                T acc{0};
                                for (std::size_t j = 0; j < outd; ++j) acc += grow[j] * wrow[j];
                                px.grad[r * in + p] += acc;
                              }
                            }
                          }
                          if (pw.requires_grad) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* grow = g.data() + r * outd;
                              for (std::size_t p = 0; p < in; ++p) {
                                const T v = px.value[r * in + p];
                                if (v == T{0}) continue;
                                T* gw = pw.grad.data() + p * outd;
                                for (std::size_t j = 0; j < outd; ++j) gw[j] += v * grow[j];
                              }
                            }
                          }
                          if (has_bias) {
                            auto& pb = *self.parents[2];
                            if (pb.requires_grad) {
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < outd; ++j) pb.grad[j] += g[r * outd + j];
                            }
                          }
                        });
}

namespace detail {

// Softmax along an axis; entries with mask == 0 get weight 0 and a row whose
// entries are all masked is all zeros.
template <class T>
Tensor<T> softmax_impl(const Tensor<T>& x, int axis, const std::vector<unsigned char>* mask) {
  const auto ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  if (mask && mask->size() != x.numel()) throw ShapeError("softmax mask size does not match " + shape_str(x.shape()));
  const auto xv = x.values();
  std::vector<T> out(x.numel(), T{0});
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) {
        const std::size_t idx = base + k * sp.inner;
        if (!mask || (*mask)[idx]) mx = std::max(mx, xv[idx]);
      }
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T total{0};
      for (std::size_t k = 0; k < sp.len; ++k) {
        const std::size_t idx = base + k * sp.inner;
        if (!mask || (*mask)[idx]) {
          out[idx] = std::exp(xv[idx] - mx);
          total += out[idx];
        }
      }
      for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [sp](Node<T>& self) {
    auto& p = *self.parents[0];
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        T dot{0};
        for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t idx = base + k * sp.inner;
          p.grad[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  return detail::softmax_impl(x, axis, nullptr);
}

template <class T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<unsigned char>& mask, int axis) {
  return detail::softmax_impl(x, axis, &mask);
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last axis, then applies gain * xhat + bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm affine width does not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + T(kLayerNormEps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const auto& g = self.grad;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gr = g.data() + r * d;
                            const T* hr = xhat.data() + r * d;
                            if (pg.requires_grad)
                              for (std::size_t j = 0; j < d; ++j) pg.grad[j] += gr[j] * hr[j];
                            if (pb.requires_grad)
                              for (std::size_t j = 0; j < d; ++j) pb.grad[j] += gr[j];
                            if (px.requires_grad) {
                              T mean_g{0}, mean_gh{0};
                              for (std::size_t j = 0; j < d; ++j) {
                                const T gh = gr[j] * pg.value[j];
                                mean_g += gh;
                                mean_gh += gh * hr[j];
                              }
                              mean_g /= static_cast<T>(d);
                              mean_gh /= static_cast<T>(d);
                              for (std::size_t j = 0; j < d; ++j) {
                                const T gh = gr[j] * pg.value[j];
                                px.grad[r * d + j] += inv_std[r] * (gh - mean_g - hr[j] * mean_gh);
                              }
                            }
                          }
                        });
}

// Inverted dropout. Identity when not training or rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> m(x.numel());
  for (auto& v : m) v = rng.bernoulli(rate) ? T{0} : keep_scale;
  return mul(x, constant<T>(x.shape(), std::move(m)));
}

// Rows of table[V, d] selected by index.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) throw ShapeError("embedding index " + std::to_string(indices[r]) + " out of range");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_result<T>(Shape{indices.size(), d}, std::move(out), {table}, [indices, d](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) p.grad[indices[r] * d + j] += self.grad[r * d + j];
  });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  return div(a, b);
}

}  // namespace gfm
