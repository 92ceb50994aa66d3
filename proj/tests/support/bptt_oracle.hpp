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

// Textbook reverse sweep over the GRU whose gates read a gradient-stopped
// copy of the previous hidden state. The only path from h_t back to h_{t-1}
// is the carry z_t * h_{t-1}. Written from the cell equations with plain
// loops; shares nothing with the library's forward-in-time traces.

#pragma once

#include <cmath>
#include <vector>

#include "clapp/recurrent.hpp"

namespace clapp::testing {

struct OracleStep {
  std::vector<double> x, h_prev, r, z, n, hn, h;
};

inline std::vector<OracleStep> oracle_forward(const GruParams<double>& p,
                                              const std::vector<Tensor<double>>& xs) {
  const std::size_t H = p.hidden_dim(), I = p.input_dim();
  std::vector<double> h(H, 0.0);
  std::vector<OracleStep> out;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (const auto& xt : xs) {
    OracleStep s;
    s.x.assign(xt.data().begin(), xt.data().end());
    s.h_prev = h;
    s.r.resize(H);
    s.z.resize(H);
    s.n.resize(H);
    s.hn.resize(H);
    s.h.resize(H);
    for (std::size_t i = 0; i < H; ++i) {
      double ar = p.b_ir()[i] + p.b_hr()[i], az = p.b_iz()[i] + p.b_hz()[i];
      double an = p.b_in()[i], hn = p.b_hn()[i];
      for (std::size_t j = 0; j < I; ++j) {
        ar += p.w_ir()(i, j) * s.x[j];
        az += p.w_iz()(i, j) * s.x[j];
        an += p.w_in()(i, j) * s.x[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        ar += p.w_hr()(i, j) * h[j];
        az += p.w_hz()(i, j) * h[j];
        hn += p.w_hn()(i, j) * h[j];
      }
      s.r[i] = sig(ar);
      s.z[i] = sig(az);
      s.hn[i] = hn;
      s.n[i] = std::tanh(an + s.r[i] * hn);
      s.h[i] = (1 - s.z[i]) * s.n[i] + s.z[i] * h[i];
    }
    h = s.h;
    out.push_back(std::move(s));
  }
  return out;
}

/// Gradient of sum_t <signals[t], h_t> with respect to every GRU parameter.
inline GruParams<double> bptt_blocked_oracle(const GruParams<double>& p,
                                             const std::vector<Tensor<double>>& xs,
                                             const std::vector<Tensor<double>>& signals) {
  const std::size_t H = p.hidden_dim(), I = p.input_dim();
  const auto steps = oracle_forward(p, xs);
  GruParams<double> g = GruParams<double>::zeros(I, H);
  std::vector<double> carry(H, 0.0);
  for (std::size_t t = steps.size(); t-- > 0;) {
    const OracleStep& s = steps[t];
    std::vector<double> next_carry(H);
    for (std::size_t i = 0; i < H; ++i) {
      const double gh = signals[t][i] + carry[i];
      const double g_an = gh * (1 - s.z[i]) * (1 - s.n[i] * s.n[i]);
      const double g_az = gh * (s.h_prev[i] - s.n[i]) * s.z[i] * (1 - s.z[i]);
      const double g_ar = g_an * s.hn[i] * s.r[i] * (1 - s.r[i]);
      for (std::size_t j = 0; j < I; ++j) {
        g.w_ir()(i, j) += g_ar * s.x[j];
        g.w_iz()(i, j) += g_az * s.x[j];
        g.w_in()(i, j) += g_an * s.x[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        g.w_hr()(i, j) += g_ar * s.h_prev[j];
        g.w_hz()(i, j) += g_az * s.h_prev[j];
        g.w_hn()(i, j) += g_an * s.r[i] * s.h_prev[j];
      }
      g.b_ir()[i] += g_ar;
      g.b_hr()[i] += g_ar;
      g.b_iz()[i] += g_az;
      g.b_hz()[i] += g_az;
      g.b_in()[i] += g_an;
      g.b_hn()[i] += g_an * s.r[i];
      next_carry[i] = gh * s.z[i];
    }
    carry = next_carry;
  }
  return g;
}

/// Relative L2 error over all twelve tensors jointly.
inline double joint_relative_error(const GruParams<double>& a, const GruParams<double>& ref) {
  double diff = 0, norm = 0;
  for (std::size_t k = 0; k < GruParams<double>::kCount; ++k) {
    for (std::size_t i = 0; i < a.t[k].size(); ++i) {
      const double d = a.t[k][i] - ref.t[k][i];
      diff += d * d;
      norm += ref.t[k][i] * ref.t[k][i];
    }
  }
  return norm > 0 ? std::sqrt(diff / norm) : std::sqrt(diff);
}

}  // namespace clapp::testing
