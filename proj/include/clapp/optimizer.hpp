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

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "clapp/tensor.hpp"

namespace clapp {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Applies averaged update directions (already pointing downhill) to a fixed
/// list of parameter tensors. SGD adds the direction as is; Adam treats its
/// negation as the gradient.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::sgd, double lr = 2e-4,
                     double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  OptimizerKind kind() const noexcept { return kind_; }
  double lr() const noexcept { return lr_; }

  /// params[i] += step(directions[i]); `scale` multiplies every direction
  /// first (the 1/batch averaging).
  void apply(const std::vector<Tensor<T>*>& params,
             const std::vector<const Tensor<T>*>& directions, T scale) {
    if (params.size() != directions.size()) throw DimensionError("optimizer arity");
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->axpy(scale, *directions[i]);
      return;
    }
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw DimensionError("optimizer parameter list changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      const Tensor<T>& d = *directions[i];
      p.require_same_shape(d, "adam");
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = -static_cast<double>(scale) * static_cast<double>(d[k]);
        double& m = m_[i][k];
        double& v = v_[i][k];
        m = beta1_ * m + (1 - beta1_) * g;
        v = beta2_ * v + (1 - beta2_) * g * g;
        const double step = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        p[k] = static_cast<T>(static_cast<double>(p[k]) - step);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<double>> m_, v_;
};

}  // namespace clapp
