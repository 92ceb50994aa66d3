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

TEST(FiniteDiff, QuadraticGradient) {
  auto x = Tensor<double>::vector({1, -2, 0.5});
  const auto g = verify::finite_diff(
      [&] { return x[0] * x[0] + 3 * x[1] * x[1] + x[0] * x[2]; }, {&x}, verify::kFdStep);
  EXPECT_NEAR(g[0][0], 2 * 1 + 0.5, 1e-8);
  EXPECT_NEAR(g[0][1], 6 * -2, 1e-8);
  EXPECT_NEAR(g[0][2], 1, 1e-8);
  EXPECT_EQ(x, Tensor<double>::vector({1, -2, 0.5}));  // restored
}

TEST(FiniteDiff, ConstantHasZeroGradient) {
  auto x = Tensor<double>::vector({3, 4});
  const auto g = verify::finite_diff([] { return 7.0; }, {&x}, verify::kFdStep);
  EXPECT_EQ(max_abs(g[0]), 0.0);
}

TEST(FiniteDiff, NonFiniteLossIsAnError) {
  auto x = Tensor<double>::vector({1});
  EXPECT_THROW(verify::finite_diff([&] { return std::log(x[0] - 1); }, {&x}, verify::kFdStep),
               NumericError);
}

TEST(Equivalence, EveryRulePassesOnASmallBatch) {
  verify::VerifyOptions o;
  o.instances = 10;
  const auto r = verify::equivalence_report("all", o);
  EXPECT_TRUE(r.passed()) << r.summary();
  EXPECT_EQ(r.rules.size(), verify::rule_names().size());
  for (const auto& s : r.rules) EXPECT_GT(s.asserted, 0u) << s.rule;
}

TEST(Equivalence, SignFlipIsCaughtForEveryRule) {
  for (const auto& name : verify::rule_names()) {
    verify::VerifyOptions o;
    o.instances = 10;
    o.corrupt = name;
    const auto r = verify::equivalence_report(name, o);
    EXPECT_FALSE(r.passed()) << name;
  }
}

TEST(Equivalence, InactiveInstancesYieldExactZeros) {
  verify::VerifyOptions o;
  o.instances = 20;
  for (const std::string name : {"predicted-layer", "context-layer", "predictor", "clapp-step"}) {
    const auto r = verify::equivalence_report(name, o);
    EXPECT_GE(r.rule(name).inactive, 1u) << name;
    for (const auto& g : r.instances) {
      // Every fifth instance is rescaled past the margin unless no activity
      // reaches the score.
      if (g.instance % 5 == 4 && !g.degenerate) {
        EXPECT_TRUE(g.inactive) << name;
      }
      EXPECT_FALSE(g.nonzero_when_inactive) << name;
    }
  }
}

TEST(Equivalence, UnknownScopeRejected) {
  EXPECT_THROW(verify::equivalence_report("nope"), InputError);
  verify::VerifyOptions o;
  o.corrupt = "nope";
  EXPECT_THROW(verify::equivalence_report("all", o), InputError);
}

TEST(Equivalence, ReportSerialisesTolerancesAndWorstInstance) {
  verify::VerifyOptions o;
  o.instances = 3;
  const auto j = verify::equivalence_report("predictor", o).to_json();
  EXPECT_EQ(j["tolerances"]["finite_difference_step"].get<double>(), 1e-5);
  EXPECT_TRUE(j["rules"][0].contains("worst_instance"));
}

TEST(Equivalence, DegenerateInstanceIsFlaggedNotAsserted) {
  verify::GradReport r;
  r.degenerate = true;
  r.diff_fd2 = 1;
  r.ref_fd2 = 1;
  EXPECT_TRUE(r.flagged());
  EXPECT_FALSE(r.breach());
  r.degenerate = false;
  EXPECT_TRUE(r.breach());
}

TEST(Equivalence, JointErrorToleratesOneVanishingTensor) {
  // One tensor with a zero reference and a tiny absolute error should not
  // fail the whole instance.
  verify::GradReport r;
  r.diff_fd2 = 1e-30;
  r.ref_fd2 = 1.0;
  EXPECT_FALSE(r.breach());
}

}  // namespace
}  // namespace clapp
