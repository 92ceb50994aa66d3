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

// Small hand-rolled generators for property tests. Every case is driven by
// its own seed so a failure message names exactly the input to replay.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "clapp/clapp.hpp"

namespace clapp::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  std::size_t size(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return real(0, 1) < p; }
  int sign() { return coin() ? 1 : -1; }

  template <typename T = double>
  Tensor<T> uniform(Shape shape, double lo = -1, double hi = 1) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(real(lo, hi));
    return t;
  }

  template <typename T = double>
  Tensor<T> gaussian(Shape shape, double sd = 1) {
    std::normal_distribution<double> d(0, sd);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(d(rng_));
    return t;
  }

  /// Values bounded away from zero by `margin`, for activations that must not
  /// sit on the ReLU kink.
  Tensor<double> away_from_zero(Shape shape, double margin = 0.05) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = sign() * real(margin, 1.0);
    return t;
  }

  /// A dense ReLU encoder with random weights.
  Encoder<double> dense_encoder(std::size_t in, std::vector<std::size_t> widths) {
    Encoder<double> e(dense_preset(in, widths), {in});
    for (std::size_t l = 0; l < e.num_layers(); ++l) {
      e.params(l).weight = uniform(e.params(l).weight.shape(), -0.8, 0.8);
      e.params(l).bias = uniform(e.params(l).bias.shape(), -0.2, 0.2);
    }
    return e;
  }

 private:
  std::mt19937_64 rng_;
  std::uint64_t seed_;
};

inline std::uint64_t case_seed(std::uint64_t base, std::size_t i) {
  std::uint64_t x = base + 0x9E3779B97F4A7C15ULL * (i + 1);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  return x ^ (x >> 29);
}

/// Runs `body(gen)` for `n` generated cases. Inside GoogleTest the seed of a
/// failing case shows up through SCOPED_TRACE.
#define CLAPP_FOR_ALL(n, base, gen, ...)                                   \
  for (std::size_t clapp_case_ = 0; clapp_case_ < (n); ++clapp_case_) {     \
    const std::uint64_t clapp_seed_ = ::clapp::testing::case_seed((base), clapp_case_); \
    SCOPED_TRACE("case seed " + std::to_string(clapp_seed_));               \
    ::clapp::testing::Gen gen(clapp_seed_);                                 \
    __VA_ARGS__                                                             \
  }

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace clapp::testing
