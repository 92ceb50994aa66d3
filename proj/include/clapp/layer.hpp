// Copyright 2026 The CLAPP Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// One trainable layer: dense or conv, an activation, and at most one static
// max-pooling stage. The forward pass keeps everything its adjoint needs.

#pragma once

#include <optional>
#include <string>

#include "clapp/tensor.hpp"

namespace clapp {

enum class LayerKind { dense, conv };
enum class Activation { relu, linear };

inline std::string to_string(LayerKind k) { return k == LayerKind::dense ? "dense" : "conv"; }
inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

struct PoolSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
  bool operator==(const PoolSpec&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // dense: in/out feature counts. conv: in/out channel counts.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  Activation activation = Activation::relu;
  std::optional<PoolSpec> pool;

  static LayerSpec dense(std::size_t in, std::size_t out,
                         Activation act = Activation::relu) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in = in;
    s.out = out;
    s.kernel = 1;
    s.activation = act;
    return s;
  }

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel,
                        std::size_t stride, std::size_t pad,
                        Activation act = Activation::relu,
                        std::optional<PoolSpec> pool = std::nullopt) {
    return LayerSpec{LayerKind::conv, in, out, kernel, stride, pad, act, pool};
  }

  Shape weight_shape() const {
    if (kind == LayerKind::dense) return {out, in};
    return {out, in, kernel, kernel};
  }

  std::size_t fan_in() const {
    return kind == LayerKind::dense ? in : in * kernel * kernel;
  }

  void validate() const {
    if (in == 0 || out == 0) throw DimensionError("layer with zero width");
    if (kind == LayerKind::dense && pool) {
      throw DimensionError("pooling is only defined for conv layers");
    }
    if (kind == LayerKind::conv && (kernel == 0 || stride == 0)) {
      throw DimensionError("conv kernel and stride must be positive");
    }
  }

  bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct LayerParams {
  Tensor<T> weight;
  Tensor<T> bias;

  template <typename U>
  LayerParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>()};
  }
};

/// Gradients (or updates) for one layer's parameters.
template <typename T>
struct LayerGrads {
  Tensor<T> weight;
  Tensor<T> bias;

  static LayerGrads zeros_like(const LayerParams<T>& p) {
    return {Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  }

  LayerGrads& operator+=(const LayerGrads& o) {
    weight += o.weight;
    bias += o.bias;
    return *this;
  }

  void axpy(T alpha, const LayerGrads& o) {
    weight.axpy(alpha, o.weight);
    bias.axpy(alpha, o.bias);
  }

  T squared_norm() const {
    T n = l2_norm(weight), b = l2_norm(bias);
    return n * n + b * b;
  }
};

/// Forward record of one layer at one time step.
template <typename T>
struct LayerCache {
  Tensor<T> input;   // x (as fed, dense inputs of any shape are flattened)
  Tensor<T> pre;     // a
  Tensor<T> act;     // z = rho(a)
  Tensor<T> output;  // act after pooling (== act without pooling)
  std::optional<PoolRecord> pool;
  Tensor<T> vec;     // spatial mean of output per channel; == output for dense
};

/// Spatial mean per channel of a C x H x W map; rank-1 tensors pass through.
template <typename T>
Tensor<T> pool_to_vector(const Tensor<T>& z) {
  if (z.rank() == 1) return z;
  if (z.rank() != 3) throw DimensionError("pool_to_vector expects C x H x W");
  const std::size_t c = z.dim(0), plane = z.dim(1) * z.dim(2);
  Tensor<T> v({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s{0};
    for (std::size_t k = 0; k < plane; ++k) s += z[ch * plane + k];
    v[ch] = s / static_cast<T>(plane);
  }
  return v;
}

template <typename T>
Tensor<T> activate(const Tensor<T>& a, Activation act) {
  return act == Activation::relu ? relu(a) : a;
}

template <typename T>
Tensor<T> activation_prime(const Tensor<T>& a, Activation act) {
  return act == Activation::relu ? relu_prime(a) : Tensor<T>(a.shape(), T{1});
}

template <typename T>
LayerCache<T> layer_forward(const LayerSpec& spec, const LayerParams<T>& p,
                            const Tensor<T>& x) {
  LayerCache<T> c;
  if (spec.kind == LayerKind::dense) {
    if (x.size() != spec.in) {
      throw DimensionError("dense layer expects " + std::to_string(spec.in) +
                           " inputs, got " + shape_str(x.shape()));
    }
    c.input = x.flattened();
    c.pre = matvec(p.weight, c.input);
    c.pre += p.bias;
  } else {
    if (x.rank() != 3 || x.dim(0) != spec.in) {
      throw DimensionError("conv layer expects " + std::to_string(spec.in) +
                           " x H x W input, got " + shape_str(x.shape()));
    }
    c.input = x;
    c.pre = conv2d(x, p.weight, {spec.stride, spec.pad});
    const std::size_t plane = c.pre.dim(1) * c.pre.dim(2);
    for (std::size_t o = 0; o < spec.out; ++o)
      for (std::size_t k = 0; k < plane; ++k) c.pre[o * plane + k] += p.bias[o];
  }
  c.act = activate(c.pre, spec.activation);
  if (spec.pool) {
    auto [pooled, rec] = maxpool2d(c.act, spec.pool->window, spec.pool->stride);
    c.output = std::move(pooled);
    c.pool = std::move(rec);
  } else {
    c.output = c.act;
  }
  c.vec = pool_to_vector(c.output);
  return c;
}

/// Lifts a gradient on the layer's vector output to a gradient on its output
/// map (spread evenly over the spatial cells that were averaged).
template <typename T>
Tensor<T> vector_grad_to_output(const LayerCache<T>& cache, const Tensor<T>& up_vec) {
  if (up_vec.size() != cache.vec.size()) {
    throw DimensionError("upstream vector " + shape_str(up_vec.shape()) +
                         " vs layer vector " + shape_str(cache.vec.shape()));
  }
  if (cache.output.rank() == 1) return up_vec.reshaped(cache.output.shape());
  const std::size_t c = cache.output.dim(0);
  const std::size_t plane = cache.output.dim(1) * cache.output.dim(2);
  Tensor<T> g(cache.output.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < plane; ++k)
      g[ch * plane + k] = up_vec[ch] / static_cast<T>(plane);
  return g;
}

/// Gradient on the pre-activation a given a gradient on the output map.
template <typename T>
Tensor<T> output_grad_to_preactivation(const LayerSpec& spec,
                                       const LayerCache<T>& cache,
                                       const Tensor<T>& up_out) {
  if (up_out.shape() != cache.output.shape()) {
    throw DimensionError("upstream " + shape_str(up_out.shape()) +
                         " does not match cached output " +
                         shape_str(cache.output.shape()));
  }
  Tensor<T> g_act = cache.pool ? maxpool2d_backward(up_out, *cache.pool) : up_out;
  if (g_act.shape() != cache.pre.shape()) {
    throw DimensionError("cache pre-activation shape mismatch");
  }
  return hadamard(g_act, activation_prime(cache.pre, spec.activation));
}

/// Weight and bias gradients of <upstream, layer output> for the cached step.
/// For a dense layer this is upstream_j * rho'(a_j) * x_i.
template <typename T>
LayerGrads<T> layer_adjoint(const LayerSpec& spec, const LayerCache<T>& cache,
                            const Tensor<T>& up_out) {
  const Tensor<T> g_pre = output_grad_to_preactivation(spec, cache, up_out);
  if (spec.kind == LayerKind::dense) {
    if (cache.input.size() != spec.in) throw DimensionError("cached input size");
    return {outer(g_pre, cache.input), g_pre};
  }
  Tensor<T> gw = conv2d_weight_grad(cache.input, g_pre, spec.kernel, spec.kernel,
                                    {spec.stride, spec.pad});
  Tensor<T> gb({spec.out});
  const std::size_t plane = g_pre.dim(1) * g_pre.dim(2);
  for (std::size_t o = 0; o < spec.out; ++o) {
    T s{0};
    for (std::size_t k = 0; k < plane; ++k) s += g_pre[o * plane + k];
    gb[o] = s;
  }
  return {std::move(gw), std::move(gb)};
}

/// Gradient of <upstream, layer output> with respect to the layer's input.
template <typename T>
Tensor<T> input_adjoint(const LayerSpec& spec, const LayerParams<T>& p,
                        const LayerCache<T>& cache, const Tensor<T>& up_out) {
  const Tensor<T> g_pre = output_grad_to_preactivation(spec, cache, up_out);
  if (spec.kind == LayerKind::dense) {
    return matvec_transposed(p.weight, g_pre).reshaped(cache.input.shape());
  }
  return conv2d_input_grad(g_pre, p.weight, cache.input.dim(1), cache.input.dim(2),
                           {spec.stride, spec.pad});
}

}  // namespace clapp
