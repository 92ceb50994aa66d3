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

// GRU layer whose gates see the previous hidden state through block_grad:
//
//   r = sigmoid(W_ir x + b_ir + W_hr h' + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h' + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h' + b_hn))
//   h = (1 - z) * n + z * h_prev
//
// where h' is h_prev with its gradient stopped. Forward values equal a plain
// GRU. The only surviving temporal path is the diagonal carry z * h_prev, so
// d h_t / d theta obeys a per-unit forward recursion (the eligibility trace)
//
//   e_t = (local derivative at t) + z_t * e_{t-1}
//
// and the gradient of sum_t <L_t, h_t> is sum_t L_t * e_t.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "clapp/encoder.hpp"

namespace clapp {

template <typename T>
struct GruParams {
  static constexpr std::size_t kCount = 12;
  // Order: W_ir, W_iz, W_in, W_hr, W_hz, W_hn, b_ir, b_iz, b_in, b_hr, b_hz, b_hn.
  std::array<Tensor<T>, kCount> t;

  Tensor<T>& w_ir() { return t[0]; }
  Tensor<T>& w_iz() { return t[1]; }
  Tensor<T>& w_in() { return t[2]; }
  Tensor<T>& w_hr() { return t[3]; }
  Tensor<T>& w_hz() { return t[4]; }
  Tensor<T>& w_hn() { return t[5]; }
  Tensor<T>& b_ir() { return t[6]; }
  Tensor<T>& b_iz() { return t[7]; }
  Tensor<T>& b_in() { return t[8]; }
  Tensor<T>& b_hr() { return t[9]; }
  Tensor<T>& b_hz() { return t[10]; }
  Tensor<T>& b_hn() { return t[11]; }
  const Tensor<T>& w_ir() const { return t[0]; }
  const Tensor<T>& w_iz() const { return t[1]; }
  const Tensor<T>& w_in() const { return t[2]; }
  const Tensor<T>& w_hr() const { return t[3]; }
  const Tensor<T>& w_hz() const { return t[4]; }
  const Tensor<T>& w_hn() const { return t[5]; }
  const Tensor<T>& b_ir() const { return t[6]; }
  const Tensor<T>& b_iz() const { return t[7]; }
  const Tensor<T>& b_in() const { return t[8]; }
  const Tensor<T>& b_hr() const { return t[9]; }
  const Tensor<T>& b_hz() const { return t[10]; }
  const Tensor<T>& b_hn() const { return t[11]; }

  static const char* name(std::size_t i) {
    static const char* names[kCount] = {"W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn",
                                        "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"};
    return names[i];
  }

  std::size_t input_dim() const { return t[0].dim(1); }
  std::size_t hidden_dim() const { return t[0].dim(0); }

  static GruParams zeros(std::size_t input, std::size_t hidden) {
    if (input == 0 || hidden == 0) throw DimensionError("GRU dims must be positive");
    GruParams p;
    for (std::size_t i = 0; i < 3; ++i) p.t[i] = Tensor<T>({hidden, input});
    for (std::size_t i = 3; i < 6; ++i) p.t[i] = Tensor<T>({hidden, hidden});
    for (std::size_t i = 6; i < kCount; ++i) p.t[i] = Tensor<T>({hidden});
    return p;
  }

  static GruParams random(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
    GruParams p = zeros(input, hidden);
    for (auto& x : p.t) x = uniform_init<T>(x.shape(), hidden, rng);
    return p;
  }

  void validate() const {
    const std::size_t h = t[0].rank() == 2 ? t[0].dim(0) : 0;
    const std::size_t in = t[0].rank() == 2 ? t[0].dim(1) : 0;
    if (h == 0 || in == 0) throw DimensionError("GRU input weights must be matrices");
    for (std::size_t i = 0; i < 3; ++i)
      if (t[i].shape() != Shape{h, in}) throw DimensionError("GRU input weight shape");
    for (std::size_t i = 3; i < 6; ++i)
      if (t[i].shape() != Shape{h, h}) throw DimensionError("GRU recurrent weights must be square");
    for (std::size_t i = 6; i < kCount; ++i)
      if (t[i].shape() != Shape{h}) throw DimensionError("GRU bias shape");
  }

  GruParams& operator+=(const GruParams& o) {
    for (std::size_t i = 0; i < kCount; ++i) t[i] += o.t[i];
    return *this;
  }

  void fill(T v) {
    for (auto& x : t) x.fill(v);
  }

  template <typename U>
  GruParams<U> cast() const {
    GruParams<U> p;
    for (std::size_t i = 0; i < kCount; ++i) p.t[i] = t[i].template cast<U>();
    return p;
  }
};

/// Everything one step of the blocked GRU needs for its update pass.
template <typename T>
struct GruStep {
  Tensor<T> x;
  Tensor<T> h_prev;
  Tensor<T> r, z, n;
  Tensor<T> hn;  // W_hn h_prev + b_hn
  Tensor<T> h;
};

template <typename T>
inline T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

template <typename T>
GruStep<T> gru_forward_blocked(const GruParams<T>& p, const Tensor<T>& x,
                               const Tensor<T>& h_prev) {
  const std::size_t hd = p.hidden_dim();
  if (x.size() != p.input_dim() || h_prev.size() != hd) {
    throw DimensionError("GRU step: x " + shape_str(x.shape()) + ", h " +
                         shape_str(h_prev.shape()) + " for params " +
                         shape_str(p.w_ir().shape()));
  }
  GruStep<T> s;
  s.x = x.flattened();
  s.h_prev = h_prev.flattened();
  const Tensor<T> ir = matvec(p.w_ir(), s.x), iz = matvec(p.w_iz(), s.x),
                  in = matvec(p.w_in(), s.x);
  const Tensor<T> hr = matvec(p.w_hr(), s.h_prev), hz = matvec(p.w_hz(), s.h_prev);
  s.hn = matvec(p.w_hn(), s.h_prev);
  s.hn += p.b_hn();
  s.r = Tensor<T>({hd});
  s.z = Tensor<T>({hd});
  s.n = Tensor<T>({hd});
  s.h = Tensor<T>({hd});
  for (std::size_t i = 0; i < hd; ++i) {
    s.r[i] = sigmoid(ir[i] + p.b_ir()[i] + hr[i] + p.b_hr()[i]);
    s.z[i] = sigmoid(iz[i] + p.b_iz()[i] + hz[i] + p.b_hz()[i]);
    s.n[i] = std::tanh(in[i] + p.b_in()[i] + s.r[i] * s.hn[i]);
    s.h[i] = (T{1} - s.z[i]) * s.n[i] + s.z[i] * s.h_prev[i];
  }
  return s;
}

/// Runs a sequence from `h0`, returning the per-step caches.
template <typename T>
std::vector<GruStep<T>> gru_run(const GruParams<T>& p, const std::vector<Tensor<T>>& xs,
                                Tensor<T> h0) {
  std::vector<GruStep<T>> cache;
  cache.reserve(xs.size());
  for (const auto& x : xs) {
    cache.push_back(gru_forward_blocked(p, x, h0));
    h0 = cache.back().h;
  }
  return cache;
}

/// Per-unit eligibility traces d h_t[i] / d theta for every GRU parameter in
/// row i (stored with the parameters' own shapes).
template <typename T>
class EligibilityTraces {
 public:
  EligibilityTraces() = default;
  EligibilityTraces(std::size_t input, std::size_t hidden)
      : e_(GruParams<T>::zeros(input, hidden)) {}

  void reset() { e_.fill(T{0}); }

  /// e <- local(step) + z * e
  void advance(const GruStep<T>& s) {
    const std::size_t hd = s.h.size(), in = s.x.size();
    for (std::size_t i = 0; i < hd; ++i) {
      const T z = s.z[i];
      const T dn = (T{1} - z) * (T{1} - s.n[i] * s.n[i]);
      const T dz = (s.h_prev[i] - s.n[i]) * z * (T{1} - z);
      const T dr = dn * s.hn[i] * s.r[i] * (T{1} - s.r[i]);
      for (std::size_t j = 0; j < in; ++j) {
        e_.w_ir()(i, j) = dr * s.x[j] + z * e_.w_ir()(i, j);
        e_.w_iz()(i, j) = dz * s.x[j] + z * e_.w_iz()(i, j);
        e_.w_in()(i, j) = dn * s.x[j] + z * e_.w_in()(i, j);
      }
      for (std::size_t j = 0; j < hd; ++j) {
        e_.w_hr()(i, j) = dr * s.h_prev[j] + z * e_.w_hr()(i, j);
        e_.w_hz()(i, j) = dz * s.h_prev[j] + z * e_.w_hz()(i, j);
        e_.w_hn()(i, j) = dn * s.r[i] * s.h_prev[j] + z * e_.w_hn()(i, j);
      }
      e_.b_ir()[i] = dr + z * e_.b_ir()[i];
      e_.b_hr()[i] = dr + z * e_.b_hr()[i];
      e_.b_iz()[i] = dz + z * e_.b_iz()[i];
      e_.b_hz()[i] = dz + z * e_.b_hz()[i];
      e_.b_in()[i] = dn + z * e_.b_in()[i];
      e_.b_hn()[i] = dn * s.r[i] + z * e_.b_hn()[i];
    }
  }

  /// acc += signal (per unit) * traces
  void accumulate(const Tensor<T>& signal, GruParams<T>& acc) const {
    const std::size_t hd = e_.hidden_dim();
    if (signal.size() != hd) throw DimensionError("learning signal dimension");
    for (std::size_t k = 0; k < GruParams<T>::kCount; ++k) {
      const Tensor<T>& e = e_.t[k];
      Tensor<T>& a = acc.t[k];
      const std::size_t cols = e.size() / hd;
      for (std::size_t i = 0; i < hd; ++i)
        for (std::size_t j = 0; j < cols; ++j) a[i * cols + j] += signal[i] * e[i * cols + j];
    }
  }

  const GruParams<T>& traces() const noexcept { return e_; }

 private:
  GruParams<T> e_;
};

/// Gradient of sum_t <signals[t], h_t> over a cached blocked-GRU sequence,
/// computed forward in time with eligibility traces.
template <typename T>
GruParams<T> eprop_update(const std::vector<GruStep<T>>& cache,
                          const std::vector<Tensor<T>>& signals) {
  if (cache.empty()) throw HistoryError("e-prop needs a recorded sequence");
  if (signals.size() != cache.size()) {
    throw HistoryError("one learning signal per cached step required");
  }
  const std::size_t in = cache.front().x.size(), hd = cache.front().h.size();
  EligibilityTraces<T> traces(in, hd);
  GruParams<T> grad = GruParams<T>::zeros(in, hd);
  for (std::size_t t = 0; t < cache.size(); ++t) {
    traces.advance(cache[t]);
    traces.accumulate(signals[t], grad);
  }
  return grad;
}

}  // namespace clapp
