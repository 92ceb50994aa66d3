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

// Datasets and the temporal streams built from them. A sample is split into
// one or more temporal sequences (image columns of patches, or the rows of a
// T x D sequence); the stream fixates on one sequence and occasionally
// saccades to a different sample.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "clapp/tensor.hpp"

namespace clapp {

struct Sample {
  std::int64_t id = 0;
  Tensor<float> tensor;  // C x H x W image or T x D sequence
  std::optional<int> label;
};

using Dataset = std::vector<Sample>;

inline void check_unique_ids(const Dataset& ds) {
  std::set<std::int64_t> seen;
  for (const auto& s : ds) {
    if (!seen.insert(s.id).second) {
      throw InputError("duplicate sample id " + std::to_string(s.id));
    }
  }
}

struct StreamEvent {
  Tensor<float> x;
  std::size_t t = 0;
  std::int64_t source_id = 0;
  int y = 1;  // +1 fixation, -1 first event after a saccade
  std::size_t sequence = 0;
  std::size_t position = 0;
};

struct PatchGrid {
  std::size_t patch_size = 16;
  std::size_t stride = 8;

  std::size_t count(std::size_t extent) const {
    if (patch_size == 0 || stride == 0) throw DimensionError("patch size/stride must be positive");
    if (extent < patch_size || (extent - patch_size) % stride != 0) {
      throw DimensionError("patch grid " + std::to_string(patch_size) + "/" +
                           std::to_string(stride) + " does not tile extent " +
                           std::to_string(extent));
    }
    return (extent - patch_size) / stride + 1;
  }
};

/// Splits a C x H x W image into columns of patches; each column is ordered
/// top to bottom and forms one temporal sequence.
inline std::vector<std::vector<Tensor<float>>> patchify(const Tensor<float>& image,
                                                        const PatchGrid& grid) {
  if (image.rank() != 3) throw DimensionError("patchify expects C x H x W");
  const std::size_t c = image.dim(0);
  const std::size_t rows = grid.count(image.dim(1));
  const std::size_t cols = grid.count(image.dim(2));
  const std::size_t p = grid.patch_size;
  std::vector<std::vector<Tensor<float>>> out(cols);
  for (std::size_t col = 0; col < cols; ++col) {
    out[col].reserve(rows);
    for (std::size_t row = 0; row < rows; ++row) {
      Tensor<float> patch({c, p, p});
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            patch(ch, i, j) = image(ch, row * grid.stride + i, col * grid.stride + j);
      out[col].push_back(std::move(patch));
    }
  }
  return out;
}

/// Averages channels to one and standardizes to zero mean, unit variance.
inline Tensor<float> grayscale_normalize(const Tensor<float>& image) {
  if (image.rank() != 3) throw DimensionError("grayscale_normalize expects C x H x W");
  const std::size_t c = image.dim(0), plane = image.dim(1) * image.dim(2);
  Tensor<float> g({1, image.dim(1), image.dim(2)});
  for (std::size_t k = 0; k < plane; ++k) {
    double s = 0;
    for (std::size_t ch = 0; ch < c; ++ch) s += image[ch * plane + k];
    g[k] = static_cast<float>(s / static_cast<double>(c));
  }
  double mean = 0, var = 0;
  for (float v : g.data()) mean += v;
  mean /= static_cast<double>(plane);
  for (float v : g.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(plane)) + 1e-8;
  for (auto& v : g.data()) v = static_cast<float>((v - mean) / sd);
  return g;
}

/// Temporal sequences of a sample: patch columns for images (when a grid is
/// given), otherwise the slices along the leading axis.
inline std::vector<std::vector<Tensor<float>>> sample_sequences(
    const Sample& s, const std::optional<PatchGrid>& grid) {
  const Tensor<float>& t = s.tensor;
  if (grid) return patchify(t, *grid);
  if (t.rank() < 2) {
    return {{t}};
  }
  Shape step_shape(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = shape_size(step_shape);
  std::vector<Tensor<float>> seq;
  seq.reserve(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    seq.emplace_back(step_shape, std::vector<float>(t.data().begin() + i * n,
                                                    t.data().begin() + (i + 1) * n));
  }
  return {std::move(seq)};
}

/// Dataset pre-split into per-sample temporal sequences.
class SequenceCorpus {
 public:
  SequenceCorpus(const Dataset& ds, std::optional<PatchGrid> grid = std::nullopt) {
    if (ds.empty()) throw InputError("empty dataset");
    check_unique_ids(ds);
    for (const auto& s : ds) {
      ids_.push_back(s.id);
      labels_.push_back(s.label);
      seqs_.push_back(sample_sequences(s, grid));
    }
  }

  std::size_t num_samples() const noexcept { return seqs_.size(); }
  std::int64_t id(std::size_t i) const { return ids_.at(i); }
  const std::optional<int>& label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::vector<Tensor<float>>>& sequences(std::size_t i) const {
    return seqs_.at(i);
  }
  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& s : seqs_)
      for (const auto& q : s) n += q.size();
    return n;
  }

  /// A uniformly chosen step of a uniformly chosen sample other than `exclude`.
  const Tensor<float>& random_step(std::mt19937_64& rng,
                                   std::optional<std::size_t> exclude,
                                   std::size_t* chosen = nullptr) const {
    const std::size_t i = pick_sample(rng, exclude);
    if (chosen) *chosen = i;
    const auto& seqs = seqs_[i];
    std::uniform_int_distribution<std::size_t> ds(0, seqs.size() - 1);
    const auto& seq = seqs[ds(rng)];
    std::uniform_int_distribution<std::size_t> dp(0, seq.size() - 1);
    return seq[dp(rng)];
  }

  /// Uniform over samples, skipping `exclude` when another sample exists.
  std::size_t pick_sample(std::mt19937_64& rng, std::optional<std::size_t> exclude) const {
    const std::size_t n = seqs_.size();
    if (!exclude || n == 1) {
      std::uniform_int_distribution<std::size_t> d(0, n - 1);
      return d(rng);
    }
    std::uniform_int_distribution<std::size_t> d(0, n - 2);
    std::size_t i = d(rng);
    return i >= *exclude ? i + 1 : i;
  }

 private:
  std::vector<std::int64_t> ids_;
  std::vector<std::optional<int>> labels_;
  std::vector<std::vector<std::vector<Tensor<float>>>> seqs_;
};

/// Fixation/saccade stream. At every step after the first, with probability
/// p_switch the gaze jumps to a random position of a different sample (y=-1);
/// otherwise it advances one step along the current sequence (y=+1), moving on
/// to the sample's next sequence when the current one is exhausted.
class FixationSaccadeStream {
 public:
  FixationSaccadeStream(const SequenceCorpus& corpus, double p_switch, std::uint64_t seed)
      : corpus_(&corpus), p_switch_(p_switch), rng_(seed) {
    if (!(p_switch >= 0.0 && p_switch <= 1.0)) {
      throw InputError("p_switch must lie in [0, 1]");
    }
  }

  StreamEvent next() {
    int y = 1;
    if (t_ == 0) {
      jump(std::nullopt);
    } else {
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(rng_) < p_switch_) {
        const std::int64_t before = corpus_->id(sample_);
        jump(sample_);
        y = corpus_->id(sample_) != before ? -1 : 1;
      } else {
        advance();
      }
    }
    StreamEvent ev{corpus_->sequences(sample_)[seq_][pos_], t_, corpus_->id(sample_), y,
                   seq_, pos_};
    ++t_;
    return ev;
  }

  std::mt19937_64& rng() noexcept { return rng_; }
  std::size_t current_sample() const noexcept { return sample_; }

 private:
  void jump(std::optional<std::size_t> exclude) {
    sample_ = corpus_->pick_sample(rng_, exclude);
    const auto& seqs = corpus_->sequences(sample_);
    std::uniform_int_distribution<std::size_t> ds(0, seqs.size() - 1);
    seq_ = ds(rng_);
    std::uniform_int_distribution<std::size_t> dp(0, seqs[seq_].size() - 1);
    pos_ = dp(rng_);
  }

  void advance() {
    const auto& seqs = corpus_->sequences(sample_);
    if (++pos_ >= seqs[seq_].size()) {
      pos_ = 0;
      seq_ = (seq_ + 1) % seqs.size();
    }
  }

  const SequenceCorpus* corpus_;
  double p_switch_;
  std::mt19937_64 rng_;
  std::size_t t_ = 0;
  std::size_t sample_ = 0;
  std::size_t seq_ = 0;
  std::size_t pos_ = 0;
};

inline std::vector<StreamEvent> fixation_saccade_stream(const SequenceCorpus& corpus,
                                                        double p_switch,
                                                        std::size_t length,
                                                        std::uint64_t seed) {
  FixationSaccadeStream s(corpus, p_switch, seed);
  std::vector<StreamEvent> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(s.next());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

struct SyntheticSpec {
  std::size_t n_classes = 8;
  std::size_t dim = 32;
  std::size_t steps = 16;
  std::size_t samples_per_class = 32;
  double noise_level = 0.1;
  std::uint64_t seed = 0;
  std::size_t latent_dim = 6;
  /// Number of super-classes sharing a coarse trajectory component.
  std::size_t groups = 2;
  /// Scale of the fine (class-specific) component relative to the coarse one.
  double fine_scale = 1.0;
  /// Std of a per-step nuisance signal confined to `distractor_dims` input
  /// directions; drawn independently at every step.
  double distractor = 0.0;
  std::size_t distractor_dims = 0;
  std::int64_t first_id = 0;
  /// Seed of the per-sample noise. Unset: continue the structure generator, so
  /// `seed` alone fixes everything. Set: same class trajectories as any other
  /// dataset with this `seed`, fresh noise (for held-out splits).
  std::optional<std::uint64_t> noise_seed;
};

/// Class trajectories are sums of slow sinusoids in a latent space
/// (a coarse part shared by classes of the same group plus a class-specific
/// part), rendered to `dim` inputs by a fixed random linear map. Samples add
/// i.i.d. Gaussian noise of std `noise_level` to every input at every step.
inline Dataset synthetic_sequence_dataset(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw InputError("synthetic dataset needs at least 2 classes");
  if (spec.dim == 0 || spec.steps == 0 || spec.latent_dim == 0 || spec.samples_per_class == 0) {
    throw InputError("synthetic dataset extents must be positive");
  }
  const std::size_t groups = std::max<std::size_t>(1, std::min(spec.groups, spec.n_classes));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  constexpr double kTwoPi = 6.283185307179586;

  const std::size_t k = spec.latent_dim;
  std::vector<double> mix(spec.dim * k);
  for (auto& m : mix) m = gauss(rng) / std::sqrt(static_cast<double>(k));

  struct Wave {
    std::vector<double> freq, phase, amp;
  };
  auto make_wave = [&](double scale) {
    Wave w;
    for (std::size_t i = 0; i < k; ++i) {
      w.freq.push_back(0.15 + 0.35 * unif(rng));
      w.phase.push_back(kTwoPi * unif(rng));
      w.amp.push_back(scale * (0.5 + unif(rng)));
    }
    return w;
  };
  std::vector<Wave> coarse, fine;
  for (std::size_t g = 0; g < groups; ++g) coarse.push_back(make_wave(1.0));
  for (std::size_t c = 0; c < spec.n_classes; ++c) fine.push_back(make_wave(spec.fine_scale));

  std::vector<std::size_t> distractor_axes;
  for (std::size_t i = 0; i < std::min(spec.distractor_dims, spec.dim); ++i)
    distractor_axes.push_back(i);

  // Clean class trajectories, steps x dim.
  std::vector<std::vector<double>> clean(spec.n_classes,
                                         std::vector<double>(spec.steps * spec.dim));
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const Wave& cw = coarse[c * groups / spec.n_classes];
    const Wave& fw = fine[c];
    for (std::size_t t = 0; t < spec.steps; ++t) {
      std::vector<double> s(k);
      for (std::size_t i = 0; i < k; ++i) {
        const double tt = static_cast<double>(t);
        s[i] = cw.amp[i] * std::sin(cw.freq[i] * tt + cw.phase[i]) +
               fw.amp[i] * std::sin(fw.freq[i] * tt + fw.phase[i]);
      }
      for (std::size_t d = 0; d < spec.dim; ++d) {
        double v = 0;
        for (std::size_t i = 0; i < k; ++i) v += mix[d * k + i] * s[i];
        clean[c][t * spec.dim + d] = v;
      }
    }
  }

  if (spec.noise_seed) rng.seed(*spec.noise_seed);
  Dataset ds;
  ds.reserve(spec.n_classes * spec.samples_per_class);
  std::int64_t id = spec.first_id;
  for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      Tensor<float> x({spec.steps, spec.dim});
      for (std::size_t t = 0; t < spec.steps; ++t) {
        for (std::size_t d = 0; d < spec.dim; ++d) {
          x(t, d) = static_cast<float>(clean[c][t * spec.dim + d] +
                                       spec.noise_level * gauss(rng));
        }
        for (std::size_t a : distractor_axes) {
          x(t, a) += static_cast<float>(spec.distractor * gauss(rng));
        }
      }
      ds.push_back({id++, std::move(x), static_cast<int>(c)});
    }
  }
  return ds;
}

inline Dataset synthetic_sequence_dataset(std::size_t n_classes, std::size_t dim,
                                          std::size_t steps, double noise_level,
                                          std::uint64_t seed,
                                          std::size_t samples_per_class = 32) {
  SyntheticSpec spec;
  spec.n_classes = n_classes;
  spec.dim = dim;
  spec.steps = steps;
  spec.noise_level = noise_level;
  spec.seed = seed;
  spec.samples_per_class = samples_per_class;
  return synthetic_sequence_dataset(spec);
}

}  // namespace clapp
