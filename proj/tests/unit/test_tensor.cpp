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

#include "support/generators.hpp"

namespace clapp {
namespace {

using testing::Gen;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto b = Tensor<double>::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor<double>::identity(2), b), b);
}

TEST(Matmul, OrthogonalRowAndColumn) {
  const auto c = matmul(Tensor<double>::matrix({{1, 0}}), Tensor<double>::matrix({{0}, {5}}));
  EXPECT_EQ(c, Tensor<double>::matrix({{0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Gen g(1);
  const auto a = g.uniform({3, 4});
  const auto b = g.uniform({4, 2});
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t l = 0; l < 4; ++l) s += a(i, l) * b(l, j);
      EXPECT_EQ(c(i, j), s);
    }
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), DimensionError);
}

TEST(Matmul, RightIdentityIsExact) {
  CLAPP_FOR_ALL(25, 11, g, {
    const std::size_t m = g.size(1, 6), k = g.size(1, 6), n = g.size(1, 6);
    const auto a = g.uniform({m, k});
    const auto b = g.uniform({k, n});
    EXPECT_EQ(matmul(matmul(a, Tensor<double>::identity(k)), b), matmul(a, b));
  })
}

TEST(Conv2d, UnitKernelIsIdentity) {
  CLAPP_FOR_ALL(10, 12, g, {
    const auto x = g.uniform({1, g.size(1, 6), g.size(1, 6)});
    const auto w = Tensor<double>({1, 1, 1, 1}, std::vector<double>{1.0});
    EXPECT_EQ(conv2d(x, w, {1, 0}), x);
  })
}

TEST(Conv2d, ZeroKernelGivesZeros) {
  Gen g(2);
  const auto x = g.uniform({2, 5, 5});
  const auto y = conv2d(x, Tensor<double>({3, 2, 3, 3}), {1, 1});
  EXPECT_EQ(max_abs(y), 0.0);
  EXPECT_EQ(y.shape(), (Shape{3, 5, 5}));
}

TEST(Conv2d, MatchesDirectWindowSum) {
  Gen g(3);
  const auto x = g.uniform({1, 3, 3});
  const auto w = g.uniform({1, 1, 2, 2});
  const auto y = conv2d(x, w, {1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) s += x(0, i + a, j + b) * w(0, 0, a, b);
      EXPECT_DOUBLE_EQ(y(0, i, j), s);
    }
}

TEST(Conv2d, NonIntegralExtentRejected) {
  EXPECT_THROW(conv2d(Tensor<double>({1, 4, 4}), Tensor<double>({1, 1, 3, 3}), {2, 0}),
               DimensionError);
}

TEST(MaxPool, ConstantInputPicksFirstCell) {
  const Tensor<double> x({1, 4, 4}, 7.0);
  const auto [y, rec] = maxpool2d(x, 2, 2);
  EXPECT_EQ(y, Tensor<double>({1, 2, 2}, 7.0));
  // The first cell of window (r, c) is input index (2r) * 4 + 2c.
  EXPECT_EQ(rec.argmax, (std::vector<std::size_t>{0, 2, 8, 10}));
}

TEST(MaxPool, IncreasingRasterPicksBottomRight) {
  Tensor<double> x({1, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) x[k] = static_cast<double>(k);
  const auto [y, rec] = maxpool2d(x, 2, 2);
  EXPECT_EQ(rec.argmax, (std::vector<std::size_t>{5, 7, 13, 15}));
  EXPECT_EQ(y, Tensor<double>({1, 2, 2}, std::vector<double>{5, 7, 13, 15}));
}

TEST(MaxPool, MatchesExhaustiveScanAndIndicesStayInWindow) {
  CLAPP_FOR_ALL(30, 13, g, {
    const std::size_t c = g.size(1, 3), h = g.size(2, 7), w = g.size(2, 7);
    const std::size_t win = g.size(1, std::min(h, w)), stride = g.size(1, 3);
    const auto x = g.uniform({c, h, w});
    const auto [y, rec] = maxpool2d(x, win, stride);
    const std::size_t oh = y.dim(1), ow = y.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double best = -1e300;
          for (std::size_t a = 0; a < win; ++a)
            for (std::size_t b = 0; b < win; ++b)
              best = std::max(best, x(ch, i * stride + a, j * stride + b));
          EXPECT_EQ(y(ch, i, j), best);
          const std::size_t idx = rec.argmax[(ch * oh + i) * ow + j];
          const std::size_t r = idx / w, col = idx % w;
          EXPECT_EQ(x(ch, r, col), best);
          EXPECT_GE(r, i * stride);
          EXPECT_LT(r, i * stride + win);
          EXPECT_GE(col, j * stride);
          EXPECT_LT(col, j * stride + win);
        }
  })
}

TEST(MaxPool, WindowLargerThanInput) {
  EXPECT_THROW(maxpool2d(Tensor<double>({1, 2, 2}), 3, 1), DimensionError);
}

TEST(Relu, SignCases) {
  const auto a = Tensor<double>::vector({-1, 0, 2});
  EXPECT_EQ(relu(a), Tensor<double>::vector({0, 0, 2}));
  EXPECT_EQ(relu_prime(a), Tensor<double>::vector({0, 0, 1}));
}

TEST(Relu, PositiveInputIsIdentity) {
  const auto a = Tensor<double>::vector({0.5, 3, 1e-9});
  EXPECT_EQ(relu(a), a);
  EXPECT_EQ(relu_prime(a), Tensor<double>({3}, 1.0));
}

TEST(Relu, ElementwiseOracle) {
  Gen g(4);
  const auto a = g.uniform({50});
  const auto r = relu(a), p = relu_prime(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(r[i], a[i] > 0 ? a[i] : 0.0);
    EXPECT_EQ(p[i], a[i] > 0 ? 1.0 : 0.0);
  }
}

TEST(Tensor, OperationsKeepValuesFinite) {
  CLAPP_FOR_ALL(20, 14, g, {
    const auto a = g.uniform({4, 5}, -1e3, 1e3);
    const auto b = g.uniform({5, 3}, -1e3, 1e3);
    EXPECT_TRUE(all_finite(matmul(a, b)));
    EXPECT_TRUE(all_finite(relu(a)));
    EXPECT_TRUE(all_finite(transpose(a)));
    EXPECT_TRUE(all_finite(outer(a.flattened(), b.flattened())));
  })
}

// ---------------------------------------------------------------------------
// Layer adjoint

TEST(LayerAdjoint, DenseOuterProductByHand) {
  const LayerSpec spec = LayerSpec::dense(2, 2, Activation::linear);
  LayerParams<double> p{Tensor<double>::identity(2), Tensor<double>({2})};
  const auto cache = layer_forward(spec, p, Tensor<double>::vector({2, 3}));
  const auto g = layer_adjoint(spec, cache, Tensor<double>::vector({1, 0}));
  EXPECT_EQ(g.weight, Tensor<double>::matrix({{2, 3}, {0, 0}}));
  EXPECT_EQ(g.bias, Tensor<double>::vector({1, 0}));
}

TEST(LayerAdjoint, ZeroUpstreamGivesZeroGrads) {
  Gen g(5);
  const LayerSpec spec = LayerSpec::conv(2, 3, 3, 1, 1, Activation::relu, PoolSpec{2, 2});
  LayerParams<double> p{g.uniform(spec.weight_shape()), g.uniform({3})};
  const auto cache = layer_forward(spec, p, g.uniform({2, 4, 4}));
  const auto gr = layer_adjoint(spec, cache, Tensor<double>(cache.output.shape()));
  EXPECT_EQ(max_abs(gr.weight), 0.0);
  EXPECT_EQ(max_abs(gr.bias), 0.0);
}

TEST(LayerAdjoint, ShapeMismatchRejected) {
  const LayerSpec spec = LayerSpec::dense(2, 2);
  LayerParams<double> p{Tensor<double>::identity(2), Tensor<double>({2})};
  const auto cache = layer_forward(spec, p, Tensor<double>::vector({1, 1}));
  EXPECT_THROW(layer_adjoint(spec, cache, Tensor<double>({3})), DimensionError);
}

/// <up, output(W, b)> by direct evaluation.
double functional(const LayerSpec& spec, const LayerParams<double>& p, const Tensor<double>& x,
                  const Tensor<double>& up) {
  return dot(layer_forward(spec, p, x).output, up);
}

bool near_kink(const LayerCache<double>& c) {
  for (double a : c.pre.data())
    if (std::abs(a) < verify::kKinkRadius) return true;
  return false;
}

void check_adjoint_against_fd(const LayerSpec& spec, Gen& g, const Shape& in_shape) {
  LayerParams<double> p{g.uniform(spec.weight_shape()), g.uniform({spec.out}, -0.3, 0.3)};
  const auto x = g.uniform(in_shape);
  const auto cache = layer_forward(spec, p, x);
  if (near_kink(cache)) GTEST_SKIP() << "instance within the ReLU kink radius";
  const auto up = g.uniform(cache.output.shape());
  const auto analytic = layer_adjoint(spec, cache, up);
  const auto fd = verify::finite_diff([&] { return functional(spec, p, x, up); },
                                      {&p.weight, &p.bias}, verify::kFdStep);
  EXPECT_LT(relative_l2_error(analytic.weight, fd[0]), 1e-6);
  EXPECT_LT(relative_l2_error(analytic.bias, fd[1]), 1e-6);
}

TEST(LayerAdjoint, ConvTwoByTwoKernelMatchesFiniteDifferences) {
  Gen g(6);
  check_adjoint_against_fd(LayerSpec::conv(1, 1, 2, 1, 0, Activation::linear), g, {1, 4, 4});
}

TEST(LayerAdjoint, DenseReluMatchesFiniteDifferences) {
  Gen g(7);
  check_adjoint_against_fd(LayerSpec::dense(5, 4), g, {5});
}

TEST(LayerAdjoint, ConvPoolMatchesFiniteDifferences) {
  // Random conv+pool layers; instances near a ReLU kink or a pooling tie are
  // skipped rather than asserted.
  std::size_t checked = 0;
  for (std::uint64_t s = 0; s < 40 && checked < 15; ++s) {
    Gen g(testing::case_seed(15, s));
    const std::size_t cin = g.size(1, 3), cout = g.size(1, 3);
    const LayerSpec spec = LayerSpec::conv(cin, cout, 3, 1, 1, Activation::relu, PoolSpec{2, 2});
    LayerParams<double> p{g.uniform(spec.weight_shape()), g.uniform({cout}, -0.3, 0.3)};
    const auto x = g.uniform({cin, 4, 4});
    const auto cache = layer_forward(spec, p, x);
    if (near_kink(cache)) continue;
    const auto up = g.uniform(cache.output.shape());
    const auto analytic = layer_adjoint(spec, cache, up);
    const auto fd = verify::finite_diff([&] { return functional(spec, p, x, up); },
                                        {&p.weight, &p.bias}, verify::kFdStep);
    SCOPED_TRACE("seed " + std::to_string(g.seed()));
    EXPECT_LT(relative_l2_error(analytic.weight, fd[0]), 1e-6);
    EXPECT_LT(relative_l2_error(analytic.bias, fd[1]), 1e-6);
    ++checked;
  }
  EXPECT_GE(checked, 10u);
}

TEST(LayerAdjoint, InputAdjointMatchesFiniteDifferences) {
  Gen g(8);
  const LayerSpec spec = LayerSpec::conv(2, 2, 3, 1, 1, Activation::linear, PoolSpec{2, 2});
  LayerParams<double> p{g.uniform(spec.weight_shape()), g.uniform({2})};
  Tensor<double> x = g.uniform({2, 4, 4});
  const auto cache = layer_forward(spec, p, x);
  const auto up = g.uniform(cache.output.shape());
  const auto analytic = input_adjoint(spec, p, cache, up);
  const auto fd = verify::finite_diff([&] { return functional(spec, p, x, up); }, {&x},
                                      verify::kFdStep);
  EXPECT_LT(relative_l2_error(analytic, fd[0]), 1e-6);
}

}  // namespace
}  // namespace clapp
