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

#include <map>

#include "support/generators.hpp"

namespace clapp {
namespace {

using testing::Gen;

Tensor<float> raster(Shape shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<float>(k);
  return t;
}

TEST(Patchify, StlSizedGrid) {
  const auto cols = patchify(Tensor<float>({1, 96, 96}), PatchGrid{16, 8});
  ASSERT_EQ(cols.size(), 11u);
  for (const auto& c : cols) EXPECT_EQ(c.size(), 11u);
}

TEST(Patchify, NonOverlappingQuadrants) {
  const auto img = raster({1, 32, 32});
  const auto cols = patchify(img, PatchGrid{16, 16});
  ASSERT_EQ(cols.size(), 2u);
  for (std::size_t col = 0; col < 2; ++col) {
    ASSERT_EQ(cols[col].size(), 2u);
    for (std::size_t row = 0; row < 2; ++row)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j)
          EXPECT_EQ(cols[col][row](0, i, j), img(0, row * 16 + i, col * 16 + j));
  }
}

TEST(Patchify, OverlappingPatchesEqualDirectSlices) {
  Gen g(1);
  const auto img = g.uniform<float>({2, 64, 64});
  const auto cols = patchify(img, PatchGrid{16, 8});
  ASSERT_EQ(cols.size(), 7u);
  for (std::size_t col = 0; col < 7; ++col) {
    ASSERT_EQ(cols[col].size(), 7u);
    for (std::size_t row = 0; row < 7; ++row)
      for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < 16; ++i)
          for (std::size_t j = 0; j < 16; ++j)
            ASSERT_EQ(cols[col][row](ch, i, j), img(ch, row * 8 + i, col * 8 + j));
  }
}

TEST(Patchify, NonIntegralGridRejected) {
  EXPECT_THROW(patchify(Tensor<float>({1, 30, 30}), PatchGrid{16, 8}), DimensionError);
}

TEST(Patchify, RoundTripWhenStrideEqualsPatch) {
  CLAPP_FOR_ALL(15, 2, g, {
    const std::size_t p = g.size(1, 5), rows = g.size(1, 4), cols = g.size(1, 4);
    const std::size_t c = g.size(1, 3);
    const auto img = g.uniform<float>({c, rows * p, cols * p});
    const auto seqs = patchify(img, PatchGrid{p, p});
    Tensor<float> back(img.shape());
    for (std::size_t col = 0; col < cols; ++col)
      for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j)
              back(ch, row * p + i, col * p + j) = seqs[col][row](ch, i, j);
    EXPECT_EQ(back, img);
  })
}

Dataset small_dataset(std::size_t n, std::size_t steps = 4) {
  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> t({steps, 3}, static_cast<float>(i));
    ds.push_back({static_cast<std::int64_t>(10 + i), t, static_cast<int>(i % 2)});
  }
  return ds;
}

TEST(Stream, NoSwitchingKeepsOneSource) {
  const auto ds = small_dataset(5);
  const SequenceCorpus corpus(ds);
  const auto ev = fixation_saccade_stream(corpus, 0.0, 200, 3);
  for (const auto& e : ev) {
    EXPECT_EQ(e.source_id, ev.front().source_id);
    EXPECT_EQ(e.y, 1);
  }
}

TEST(Stream, AlwaysSwitchingLabelsEverySaccade) {
  const auto ds = small_dataset(5);
  const SequenceCorpus corpus(ds);
  const auto ev = fixation_saccade_stream(corpus, 1.0, 200, 4);
  EXPECT_EQ(ev.front().y, 1);
  for (std::size_t t = 1; t < ev.size(); ++t) {
    EXPECT_NE(ev[t].source_id, ev[t - 1].source_id);
    EXPECT_EQ(ev[t].y, -1);
  }
}

TEST(Stream, EmpiricalSwitchRate) {
  const auto ds = small_dataset(20);
  const SequenceCorpus corpus(ds);
  const auto ev = fixation_saccade_stream(corpus, 0.5, 10000, 5);
  std::size_t switches = 0;
  for (std::size_t t = 1; t < ev.size(); ++t) switches += ev[t].y < 0;
  EXPECT_NEAR(static_cast<double>(switches) / (ev.size() - 1), 0.5, 0.02);
}

TEST(Stream, LabelIsMinusOneExactlyWhenSourceChanges) {
  CLAPP_FOR_ALL(20, 6, g, {
    const auto ds = small_dataset(g.size(1, 6), g.size(1, 5));
    const SequenceCorpus corpus(ds);
    const auto ev = fixation_saccade_stream(corpus, g.real(0, 1), 300, g.seed());
    EXPECT_EQ(ev.front().y, 1);
    for (std::size_t t = 1; t < ev.size(); ++t) {
      EXPECT_EQ(ev[t].y == -1, ev[t].source_id != ev[t - 1].source_id);
      EXPECT_EQ(ev[t].t, t);
    }
  })
}

TEST(Stream, SameSeedSameStream) {
  SyntheticSpec spec;
  spec.seed = 3;
  const auto ds = synthetic_sequence_dataset(spec);
  const SequenceCorpus corpus(ds);
  const auto a = fixation_saccade_stream(corpus, 0.5, 500, 77);
  const auto b = fixation_saccade_stream(corpus, 0.5, 500, 77);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].x, b[t].x);
    EXPECT_EQ(a[t].source_id, b[t].source_id);
    EXPECT_EQ(a[t].y, b[t].y);
  }
}

TEST(Stream, FixationAdvancesAlongTheSequence) {
  const auto ds = small_dataset(3, 6);
  const SequenceCorpus corpus(ds);
  const auto ev = fixation_saccade_stream(corpus, 0.3, 400, 8);
  for (std::size_t t = 1; t < ev.size(); ++t) {
    if (ev[t].y < 0) continue;
    EXPECT_EQ(ev[t].position, (ev[t - 1].position + 1) % 6);
  }
}

TEST(Stream, InvalidInputs) {
  EXPECT_THROW(SequenceCorpus(Dataset{}), InputError);
  const auto ds = small_dataset(2);
  const SequenceCorpus corpus(ds);
  EXPECT_THROW(FixationSaccadeStream(corpus, 1.5, 0), InputError);
  EXPECT_THROW(FixationSaccadeStream(corpus, -0.1, 0), InputError);
  Dataset dup = small_dataset(2);
  dup[1].id = dup[0].id;
  EXPECT_THROW(SequenceCorpus{dup}, InputError);
}

TEST(Stream, ImagesBecomeColumnSequences) {
  Dataset ds{{1, raster({1, 32, 32}), 0}};
  const SequenceCorpus corpus(ds, PatchGrid{16, 8});
  EXPECT_EQ(corpus.sequences(0).size(), 3u);
  EXPECT_EQ(corpus.total_steps(), 9u);
}

TEST(Synthetic, NoiselessSamplesOfAClassAreIdentical) {
  SyntheticSpec spec;
  spec.noise_level = 0;
  spec.samples_per_class = 3;
  const auto ds = synthetic_sequence_dataset(spec);
  std::map<int, const Tensor<float>*> first;
  for (const auto& s : ds) {
    auto [it, fresh] = first.emplace(*s.label, &s.tensor);
    if (!fresh) {
      EXPECT_EQ(s.tensor, *it->second);
    }
  }
}

TEST(Synthetic, SingleStepSequencesOnlyProduceSaccadeDecisions) {
  SyntheticSpec spec;
  spec.steps = 1;
  const auto ds = synthetic_sequence_dataset(spec);
  const SequenceCorpus corpus(ds);
  EXPECT_EQ(corpus.total_steps(), ds.size());
  // A fixation on a one-step sequence revisits the same step.
  const auto ev = fixation_saccade_stream(corpus, 0.5, 200, 1);
  for (std::size_t t = 1; t < ev.size(); ++t) {
    EXPECT_EQ(ev[t].position, 0u);
    if (ev[t].y > 0) {
      EXPECT_EQ(ev[t].x, ev[t - 1].x);
    }
  }
}

TEST(Synthetic, ClassMeansAreWellSeparated) {
  SyntheticSpec spec;
  spec.noise_level = 0.1;
  spec.samples_per_class = 125;  // 1000 draws
  spec.seed = 9;
  const auto ds = synthetic_sequence_dataset(spec);
  const std::size_t d = ds.front().tensor.size();
  std::vector<std::vector<double>> mean(spec.n_classes, std::vector<double>(d));
  std::vector<std::size_t> count(spec.n_classes);
  for (const auto& s : ds) {
    for (std::size_t k = 0; k < d; ++k) mean[*s.label][k] += s.tensor[k];
    ++count[*s.label];
  }
  for (std::size_t c = 0; c < spec.n_classes; ++c)
    for (auto& v : mean[c]) v /= static_cast<double>(count[c]);
  // Within-class spread: RMS distance of a sample to its class mean.
  double within = 0;
  for (const auto& s : ds) {
    double r = 0;
    for (std::size_t k = 0; k < d; ++k) r += std::pow(s.tensor[k] - mean[*s.label][k], 2);
    within += r;
  }
  within = std::sqrt(within / static_cast<double>(ds.size()));
  double closest = 1e300;
  for (std::size_t a = 0; a < spec.n_classes; ++a)
    for (std::size_t b = a + 1; b < spec.n_classes; ++b) {
      double r = 0;
      for (std::size_t k = 0; k < d; ++k) r += std::pow(mean[a][k] - mean[b][k], 2);
      closest = std::min(closest, std::sqrt(r));
    }
  EXPECT_GE(closest, 3 * within);
}

TEST(Synthetic, NoiseSeedKeepsTrajectoriesButRedrawsNoise) {
  SyntheticSpec a;
  a.noise_level = 0;
  a.samples_per_class = 1;
  SyntheticSpec b = a;
  b.noise_seed = 42;
  EXPECT_EQ(synthetic_sequence_dataset(a)[3].tensor, synthetic_sequence_dataset(b)[3].tensor);
  a.noise_level = b.noise_level = 0.5;
  EXPECT_NE(synthetic_sequence_dataset(a)[3].tensor, synthetic_sequence_dataset(b)[3].tensor);
}

TEST(Synthetic, NeedsTwoClasses) {
  SyntheticSpec spec;
  spec.n_classes = 1;
  EXPECT_THROW(synthetic_sequence_dataset(spec), InputError);
}

TEST(Grayscale, ZeroMeanUnitVariance) {
  Gen g(10);
  const auto img = g.uniform<float>({3, 8, 8}, 0, 255);
  const auto out = grayscale_normalize(img);
  ASSERT_EQ(out.shape(), (Shape{1, 8, 8}));
  double m = 0, v = 0;
  for (float x : out.data()) m += x;
  m /= 64;
  for (float x : out.data()) v += (x - m) * (x - m);
  EXPECT_NEAR(m, 0, 1e-5);
  EXPECT_NEAR(v / 64, 1, 1e-4);
}

}  // namespace
}  // namespace clapp
