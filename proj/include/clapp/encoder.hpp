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
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "clapp/layer.hpp"

namespace clapp {

/// Per-layer forward records for one input.
template <typename T>
struct EncoderState {
  std::vector<LayerCache<T>> layers;

  const Tensor<T>& vec(std::size_t layer) const { return layers.at(layer).vec; }
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
class Encoder {
 public:
  Encoder() = default;

  /// Builds the stack with zero parameters; call init() for random weights.
  Encoder(std::vector<LayerSpec> specs, Shape input_shape)
      : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
    if (specs_.empty()) throw DimensionError("encoder needs at least one layer");
    Shape s = input_shape_;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const LayerSpec& spec = specs_[l];
      spec.validate();
      if (spec.kind == LayerKind::dense) {
        if (shape_size(s) != spec.in) {
          throw DimensionError("layer " + std::to_string(l) + " expects " +
                               std::to_string(spec.in) + " inputs, previous stage yields " +
                               shape_str(s));
        }
        s = {spec.out};
      } else {
        if (s.size() != 3 || s[0] != spec.in) {
          throw DimensionError("conv layer " + std::to_string(l) +
                               " expects C x H x W input with C=" +
                               std::to_string(spec.in) + ", got " + shape_str(s));
        }
        const std::size_t h = conv_out_extent(s[1], spec.kernel, spec.stride, spec.pad);
        const std::size_t w = conv_out_extent(s[2], spec.kernel, spec.stride, spec.pad);
        s = {spec.out, h, w};
        if (spec.pool) {
          if (spec.pool->window > h || spec.pool->window > w) {
            throw DimensionError("pool window larger than conv output at layer " +
                                 std::to_string(l));
          }
          s = {spec.out, (h - spec.pool->window) / spec.pool->stride + 1,
               (w - spec.pool->window) / spec.pool->stride + 1};
        }
      }
      output_shapes_.push_back(s);
      params_.push_back({Tensor<T>(spec.weight_shape()), Tensor<T>({spec.out})});
    }
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const auto& spec = specs_[l];
      params_[l].weight = uniform_init<T>(spec.weight_shape(), spec.fan_in(), rng);
      params_[l].bias = uniform_init<T>({spec.out}, spec.fan_in(), rng);
    }
  }

  std::size_t num_layers() const noexcept { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const LayerSpec& spec(std::size_t l) const { return specs_.at(l); }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape(std::size_t l) const { return output_shapes_.at(l); }
  std::size_t vec_dim(std::size_t l) const { return output_shapes_.at(l)[0]; }

  LayerParams<T>& params(std::size_t l) { return params_.at(l); }
  const LayerParams<T>& params(std::size_t l) const { return params_.at(l); }
  std::vector<LayerParams<T>>& all_params() noexcept { return params_; }
  const std::vector<LayerParams<T>>& all_params() const noexcept { return params_; }

  EncoderState<T> forward(const Tensor<T>& x) const {
    if (shape_size(x.shape()) != shape_size(input_shape_) ||
        (specs_.front().kind == LayerKind::conv && x.shape() != input_shape_)) {
      throw DimensionError("encoder input " + shape_str(x.shape()) + ", expected " +
                           shape_str(input_shape_));
    }
    EncoderState<T> st;
    st.layers.reserve(specs_.size());
    const Tensor<T>* in = &x;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      st.layers.push_back(layer_forward(specs_[l], params_[l], *in));
      in = &st.layers.back().output;
    }
    return st;
  }

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> e(specs_, input_shape_);
    for (std::size_t l = 0; l < specs_.size(); ++l)
      e.params(l) = params_[l].template cast<U>();
    return e;
  }

 private:
  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  std::vector<Shape> output_shapes_;
  std::vector<LayerParams<T>> params_;
};

/// One recorded step: the encoder state plus the stream metadata it came from.
template <typename T>
struct TraceEntry {
  EncoderState<T> state;
  int y = 1;
  std::int64_t source_id = -1;
};

/// Ring of the last `depth` recorded steps, oldest first.
template <typename T>
class TraceBuffer {
 public:
  explicit TraceBuffer(std::size_t depth = 2) : depth_(depth) {
    if (depth_ == 0) throw HistoryError("trace depth must be positive");
  }

  void record(TraceEntry<T> entry) {
    entries_.push_back(std::move(entry));
    if (entries_.size() > depth_) entries_.pop_front();
  }

  /// The entry recorded `delta` steps before the most recent one.
  const TraceEntry<T>& at(std::size_t delta) const {
    if (delta >= entries_.size()) {
      throw HistoryError("requested " + std::to_string(delta) +
                         " steps back with " + std::to_string(entries_.size()) +
                         " recorded");
    }
    return entries_[entries_.size() - 1 - delta];
  }

  /// +1 when no saccade happened in the last `delta` recorded steps.
  int fixation_label(std::size_t delta) const {
    at(delta);
    for (std::size_t d = 0; d < delta; ++d)
      if (at(d).y < 0) return -1;
    return 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t depth() const noexcept { return depth_; }
  void clear() { entries_.clear(); }

 private:
  std::size_t depth_;
  std::deque<TraceEntry<T>> entries_;
};

/// Runs the encoder and appends the result to `trace`.
template <typename T>
const EncoderState<T>& forward_and_record(const Encoder<T>& enc, const Tensor<T>& x,
                                          TraceBuffer<T>& trace, int y,
                                          std::int64_t source_id) {
  trace.record({enc.forward(x), y, source_id});
  return trace.at(0).state;
}

// ---------------------------------------------------------------------------
// Presets

/// Stack of dense ReLU layers: in -> widths[0] -> widths[1] ...
inline std::vector<LayerSpec> dense_preset(std::size_t in,
                                           const std::vector<std::size_t>& widths) {
  std::vector<LayerSpec> specs;
  std::size_t prev = in;
  for (std::size_t w : widths) {
    specs.push_back(LayerSpec::dense(prev, w));
    prev = w;
  }
  return specs;
}

/// The six-layer VGG-like stack (3x3 convs, stride 1, pad 1; 2x2 pooling after
/// layers 2, 4, 5, 6). Channel counts 128-256-256-512-1024-1024 are divided by
/// `width_divisor`; `depth` keeps only the first layers.
inline std::vector<LayerSpec> vgg6_preset(std::size_t in_channels,
                                          std::size_t width_divisor = 8,
                                          std::size_t depth = 6) {
  if (width_divisor == 0) throw DimensionError("width divisor must be positive");
  if (depth == 0 || depth > 6) throw DimensionError("vgg6 depth must be in 1..6");
  const std::size_t widths[6] = {128, 256, 256, 512, 1024, 1024};
  const bool pooled[6] = {false, true, false, true, true, true};
  std::vector<LayerSpec> specs;
  std::size_t prev = in_channels;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t w = std::max<std::size_t>(1, widths[l] / width_divisor);
    specs.push_back(LayerSpec::conv(prev, w, 3, 1, 1, Activation::relu,
                                    pooled[l] ? std::optional<PoolSpec>(PoolSpec{2, 2})
                                              : std::nullopt));
    prev = w;
  }
  return specs;
}

}  // namespace clapp
