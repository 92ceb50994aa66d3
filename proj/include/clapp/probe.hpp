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

// Linear read-out of frozen encoder features.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "clapp/optimizer.hpp"
#include "clapp/recurrent.hpp"
#include "clapp/stream.hpp"

namespace clapp {

struct FeatureSet {
  Tensor<double> features;  // n x d
  std::vector<int> labels;
  std::vector<std::int64_t> ids;

  std::size_t size() const { return labels.size(); }
};

/// Mean over every step of every sequence of the sample of the given layer's
/// pooled activity. Layer index == num_layers selects the GRU output (the GRU
/// restarts from zero at the start of each sequence).
template <typename T>
Tensor<double> sample_feature(const Encoder<T>& enc, const GruParams<T>* gru,
                              const std::vector<std::vector<Tensor<float>>>& seqs,
                              std::size_t layer) {
  const bool recurrent = layer == enc.num_layers();
  const std::size_t dim = recurrent ? gru->hidden_dim() : enc.vec_dim(layer);
  Tensor<double> acc({dim});
  std::size_t count = 0;
  for (const auto& seq : seqs) {
    Tensor<T> h;
    if (recurrent) h = Tensor<T>({dim});
    for (const auto& step : seq) {
      const Tensor<T> x = step.template cast<T>();
      const EncoderState<T> st = enc.forward(x);
      if (recurrent) {
        h = gru_forward_blocked(*gru, st.vec(enc.num_layers() - 1), h).h;
        for (std::size_t k = 0; k < dim; ++k) acc[k] += static_cast<double>(h[k]);
      } else {
        const Tensor<T>& v = st.vec(layer);
        for (std::size_t k = 0; k < dim; ++k) acc[k] += static_cast<double>(v[k]);
      }
      ++count;
    }
  }
  acc *= 1.0 / static_cast<double>(count);
  return acc;
}

template <typename T>
FeatureSet extract_features(const Encoder<T>& enc, const SequenceCorpus& corpus,
                            std::size_t layer, const GruParams<T>* gru = nullptr,
                            std::size_t workers = 1) {
  const std::size_t max_layer = enc.num_layers() + (gru ? 1 : 0);
  if (layer >= max_layer) {
    throw InputError("layer " + std::to_string(layer) + " out of range (encoder has " +
                     std::to_string(max_layer) + " feature layers)");
  }
  const std::size_t n = corpus.num_samples();
  const std::size_t dim = layer == enc.num_layers() ? gru->hidden_dim() : enc.vec_dim(layer);
  FeatureSet fs;
  fs.features = Tensor<double>({n, dim});
  fs.labels.resize(n, -1);
  fs.ids.resize(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor<double> f = sample_feature(enc, gru, corpus.sequences(i), layer);
      std::copy(f.data().begin(), f.data().end(), fs.features.data().begin() + i * dim);
      fs.labels[i] = corpus.label(i).value_or(-1);
      fs.ids[i] = corpus.id(i);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return fs;
}

struct ProbeOptions {
  std::size_t epochs = 100;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// Standardize features with training-set mean/std before the linear map.
  bool standardize = true;
};

struct ProbeModel {
  Tensor<double> weight;  // n_classes x d
  Tensor<double> bias;    // n_classes
  std::vector<double> mean, scale;
  std::size_t layer = 0;

  std::size_t num_classes() const { return weight.dim(0); }
  std::size_t feature_dim() const { return weight.dim(1); }

  std::vector<double> logits(std::span<const double> f) const {
    std::vector<double> out(num_classes());
    for (std::size_t c = 0; c < num_classes(); ++c) {
      double s = bias[c];
      for (std::size_t k = 0; k < feature_dim(); ++k)
        s += weight(c, k) * (f[k] - mean[k]) * scale[k];
      out[c] = s;
    }
    return out;
  }

  /// Argmax, ties to the lowest class index.
  int predict(std::span<const double> f) const {
    const auto l = logits(f);
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
  }
};

inline std::size_t count_classes(const std::vector<int>& labels) {
  std::vector<int> u(labels);
  std::sort(u.begin(), u.end());
  return static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
}

/// Softmax regression by mini-batch gradient descent; deterministic under
/// `opts.seed`.
inline ProbeModel train_probe(const FeatureSet& data, const ProbeOptions& opts,
                              std::size_t layer = 0) {
  const std::size_t n = data.size();
  if (n == 0 || data.features.rank() != 2 || data.features.dim(0) != n) {
    throw DimensionError("probe features and labels are misaligned");
  }
  for (int l : data.labels)
    if (l < 0) throw InputError("probe data contains unlabeled samples");
  if (count_classes(data.labels) < 2) throw InputError("probe needs at least two classes");
  const std::size_t d = data.features.dim(1);
  const std::size_t k = static_cast<std::size_t>(
                            *std::max_element(data.labels.begin(), data.labels.end())) + 1;

  ProbeModel m;
  m.layer = layer;
  m.weight = Tensor<double>({k, d});
  m.bias = Tensor<double>({k});
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  if (opts.standardize) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) m.mean[j] += data.features(i, j);
    for (auto& v : m.mean) v /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = data.features(i, j) - m.mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      m.scale[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Optimizer<double> opt(opts.optimizer, opts.lr);
  Tensor<double> gw({k, d}), gb({k});
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      gw.fill(0.0);
      gb.fill(0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        std::span<const double> f(data.features.data().data() + i * d, d);
        auto p = m.logits(f);
        const double mx = *std::max_element(p.begin(), p.end());
        double zsum = 0;
        for (auto& v : p) zsum += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < k; ++c) {
          // Descent direction: (onehot - p) * x_standardized.
          const double g = (c == static_cast<std::size_t>(data.labels[i]) ? 1.0 : 0.0) -
                           p[c] / zsum;
          for (std::size_t j = 0; j < d; ++j) gw(c, j) += g * (f[j] - m.mean[j]) * m.scale[j];
          gb[c] += g;
        }
      }
      // The SGD path adds scale * direction, so the step size goes in scale.
      const double avg = 1.0 / static_cast<double>(end - start);
      opt.apply({&m.weight, &m.bias}, {&gw, &gb},
                opts.optimizer == OptimizerKind::sgd ? opts.lr * avg : avg);
    }
  }
  return m;
}

inline double evaluate(const ProbeModel& m, const FeatureSet& data) {
  if (data.size() == 0) throw DimensionError("no samples to evaluate");
  if (data.features.rank() != 2 || data.features.dim(0) != data.size() ||
      data.features.dim(1) != m.feature_dim()) {
    throw DimensionError("feature dimension does not match probe");
  }
  const std::size_t d = m.feature_dim();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::span<const double> f(data.features.data().data() + i * d, d);
    if (m.predict(f) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace clapp
