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

#include <gtest/gtest.h>

#include "support/bptt_oracle.hpp"
#include "support/generators.hpp"

namespace clapp {
namespace {

using testing::Gen;

GruParams<double> random_gru(Gen& g, std::size_t in, std::size_t hidden, double scale = 0.6) {
  GruParams<double> p = GruParams<double>::zeros(in, hidden);
  for (auto& t : p.t) t = g.uniform(t.shape(), -scale, scale);
  return p;
}

std::vector<Tensor<double>> random_seq(Gen& g, std::size_t len, std::size_t dim) {
  std::vector<Tensor<double>> xs;
  for (std::size_t t = 0; t < len; ++t) xs.push_back(g.uniform({dim}));
  return xs;
}

TEST(Gru, ZeroParamsAndZeroStateGiveHalfCarry) {
  // All gates at sigmoid(0) = 0.5, candidate tanh(0) = 0.
  const auto p = GruParams<double>::zeros(3, 2);
  const auto s = gru_forward_blocked(p, Tensor<double>::vector({1, 2, 3}),
                                     Tensor<double>::vector({0.4, -0.8}));
  EXPECT_EQ(s.z, Tensor<double>({2}, 0.5));
  EXPECT_EQ(s.n, Tensor<double>({2}, 0.0));
  EXPECT_EQ(s.h, Tensor<double>::vector({0.2, -0.4}));
}

TEST(Gru, SaturatedUpdateGateKeepsState) {
  auto p = GruParams<double>::zeros(1, 1);
  p.b_iz()[0] = 100;
  const auto s = gru_forward_blocked(p, Tensor<double>::vector({5}), Tensor<double>::vector({0.7}));
  EXPECT_NEAR(s.h[0], 0.7, 1e-12);
}

TEST(Gru, ForwardMatchesPlainGruCell) {
  CLAPP_FOR_ALL(20, 1, g, {
    const std::size_t in = g.size(1, 6), hd = g.size(1, 6), len = g.size(1, 12);
    const auto p = random_gru(g, in, hd);
    const auto xs = random_seq(g, len, in);
    const auto cache = gru_run(p, xs, Tensor<double>({hd}));
    const auto ref = testing::oracle_forward(p, xs);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < hd; ++i) EXPECT_NEAR(cache[t].h[i], ref[t].h[i], 1e-14);
  })
}

TEST(Gru, DimensionChecks) {
  const auto p = GruParams<double>::zeros(3, 2);
  EXPECT_THROW(gru_forward_blocked(p, Tensor<double>({4}), Tensor<double>({2})), DimensionError);
  EXPECT_THROW(gru_forward_blocked(p, Tensor<double>({3}), Tensor<double>({3})), DimensionError);
  auto bad = p;
  bad.w_hz() = Tensor<double>({2, 3});
  EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(Eprop, MatchesBlockedBackpropForLengthsOneToSixteen) {
  for (std::size_t len = 1; len <= 16; ++len) {
    CLAPP_FOR_ALL(8, 100 + len, g, {
      const std::size_t in = g.size(1, 6), hd = g.size(1, 6);
      const auto p = random_gru(g, in, hd);
      const auto xs = random_seq(g, len, in);
      const auto sig = random_seq(g, len, hd);
      const auto ep = eprop_update(gru_run(p, xs, Tensor<double>({hd})), sig);
      const auto bp = testing::bptt_blocked_oracle(p, xs, sig);
      EXPECT_LE(testing::joint_relative_error(ep, bp), 1e-10) << "length " << len;
    })
  }
}

TEST(Eprop, MatchesFiniteDifferencesWithFrozenGateInputs) {
  // The gates read h' held at the unperturbed trajectory, the carry stays
  // live. Central differences of that function give the blocked gradient.
  CLAPP_FOR_ALL(10, 2, g, {
    const std::size_t in = g.size(1, 4), hd = g.size(1, 4), len = g.size(1, 8);
    auto p = random_gru(g, in, hd);
    const auto xs = random_seq(g, len, in);
    const auto sig = random_seq(g, len, hd);
    const auto frozen = gru_run(p, xs, Tensor<double>({hd}));
    auto objective = [&] {
      Tensor<double> h({hd});
      double total = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const auto s = gru_forward_blocked(p, xs[t], frozen[t].h_prev);
        for (std::size_t i = 0; i < hd; ++i) {
          h[i] = (1 - s.z[i]) * s.n[i] + s.z[i] * h[i];
          total += sig[t][i] * h[i];
        }
      }
      return total;
    };
    std::vector<Tensor<double>*> ptrs;
    for (auto& t : p.t) ptrs.push_back(&t);
    const auto fd = verify::finite_diff(objective, ptrs, verify::kFdStep);
    const auto ep = eprop_update(frozen, sig);
    GruParams<double> fdp;
    for (std::size_t k = 0; k < GruParams<double>::kCount; ++k) fdp.t[k] = fd[k];
    EXPECT_LE(testing::joint_relative_error(ep, fdp), 1e-6);
  })
}

TEST(Eprop, ZeroSignalGivesZeroUpdate) {
  Gen g(3);
  const auto p = random_gru(g, 3, 4);
  const auto xs = random_seq(g, 6, 3);
  const std::vector<Tensor<double>> sig(6, Tensor<double>({4}));
  const auto ep = eprop_update(gru_run(p, xs, Tensor<double>({4})), sig);
  for (const auto& t : ep.t) EXPECT_EQ(max_abs(t), 0.0);
}

TEST(Eprop, LengthOneIsTheLocalDerivative) {
  Gen g(4);
  const auto p = random_gru(g, 2, 3);
  const auto xs = random_seq(g, 1, 2);
  const auto sig = random_seq(g, 1, 3);
  const auto cache = gru_run(p, xs, Tensor<double>({3}));
  const auto ep = eprop_update(cache, sig);
  // With zero initial state: dh/db_in = (1 - z)(1 - n^2).
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = cache[0];
    EXPECT_NEAR(ep.b_in()[i], sig[0][i] * (1 - s.z[i]) * (1 - s.n[i] * s.n[i]), 1e-15);
    EXPECT_EQ(ep.w_hz()(i, 0), 0.0);  // h_prev is zero
  }
}

TEST(Eprop, SignalCountMustMatchSequence) {
  Gen g(5);
  const auto p = random_gru(g, 2, 2);
  const auto cache = gru_run(p, random_seq(g, 3, 2), Tensor<double>({2}));
  EXPECT_THROW(eprop_update(cache, random_seq(g, 2, 2)), HistoryError);
  EXPECT_THROW(eprop_update<double>({}, {}), HistoryError);
}

TEST(Eprop, DiffersFromFullBackpropThroughGates) {
  // Sanity check that the blocking matters: with strong recurrent weights the
  // unblocked gradient is different.
  Gen g(6);
  auto p = random_gru(g, 2, 3, 1.5);
  const auto xs = random_seq(g, 6, 2);
  const auto sig = random_seq(g, 6, 3);
  auto full = [&] {
    const auto run = gru_run(p, xs, Tensor<double>({3}));
    double total = 0;
    for (std::size_t t = 0; t < 6; ++t) total += dot(sig[t], run[t].h);
    return total;
  };
  const auto fd = verify::finite_diff(full, {&p.w_hr()}, verify::kFdStep);
  const auto ep = eprop_update(gru_run(p, xs, Tensor<double>({3})), sig);
  EXPECT_GT(relative_l2_error(ep.w_hr(), fd[0]), 1e-3);
}

}  // namespace
}  // namespace clapp
