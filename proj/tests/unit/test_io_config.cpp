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

#include <fstream>

#include "support/generators.hpp"
#include "support/temp_dir.hpp"

namespace clapp {
namespace {

using testing::Gen;
using testing::TempDir;

TEST(Dataset, RoundTripIsBitExact) {
  TempDir dir("dataset");
  SyntheticSpec spec;
  spec.samples_per_class = 2;
  auto ds = synthetic_sequence_dataset(spec);
  ds[1].label.reset();
  save_dataset(ds, dir.path() / "d");
  const auto back = load_dataset(dir.path() / "d");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].id, ds[i].id);
    EXPECT_EQ(back[i].label, ds[i].label);
    EXPECT_EQ(back[i].tensor, ds[i].tensor);
  }
}

TEST(Dataset, MissingIndexAndTruncatedBlob) {
  TempDir dir("dataset_err");
  EXPECT_THROW(load_dataset(dir.path() / "none"), InputError);
  Dataset ds{{1, Tensor<float>::vector({1, 2, 3}), 0}};
  save_dataset(ds, dir.path() / "d");
  fs::resize_file(dir.path() / "d" / "blobs" / "1.f32", 8);
  EXPECT_THROW(load_dataset(dir.path() / "d"), InputError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  Encoder<float> enc(vgg6_preset(1, 32, 3), {1, 8, 8});
  enc.init(11);
  HyperParams hp;
  Checkpoint ck;
  ck.encoder = enc;
  ck.heads = make_heads(enc, hp, 4, false);
  std::mt19937_64 rng(1);
  ck.gru = GruParams<float>::random(4, 3, rng);
  ck.seed = 99;
  ck.step = 123;
  ck.epoch = 2;
  ck.config = {{"note", "x"}};
  save_checkpoint(ck, dir.path() / "ck");
  const auto back = load_checkpoint(dir.path() / "ck");
  EXPECT_EQ(encoder_checksum(back.encoder), encoder_checksum(enc));
  ASSERT_EQ(back.heads.size(), ck.heads.size());
  for (std::size_t i = 0; i < ck.heads.size(); ++i) {
    EXPECT_EQ(back.heads[i].w_pred, ck.heads[i].w_pred);
    EXPECT_EQ(back.heads[i].w_retro, ck.heads[i].w_retro);
    EXPECT_EQ(back.heads[i].delta_t, ck.heads[i].delta_t);
  }
  ASSERT_TRUE(back.gru.has_value());
  for (std::size_t k = 0; k < GruParams<float>::kCount; ++k) EXPECT_EQ(back.gru->t[k], ck.gru->t[k]);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.step, 123u);
  EXPECT_EQ(back.config, ck.config);
  const auto x = Gen(3).uniform<float>({1, 8, 8});
  EXPECT_EQ(back.encoder.forward(x).vec(2), enc.forward(x).vec(2));
}

TEST(Checkpoint, MissingDirectory) {
  EXPECT_THROW(load_checkpoint("/nonexistent/clapp/ck"), InputError);
}

TEST(Config, DefaultsAreValidAndRoundTrip) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
}

TEST(Config, NonDefaultValuesRoundTrip) {
  RunConfig c;
  c.seed = 5;
  c.encoder.preset = "vgg6";
  c.encoder.depth = 4;
  c.plasticity.mode = Mode::clapp_s;
  c.plasticity.offsets = {1, 2};
  c.plasticity.context = ContextSource::layer_above;
  c.plasticity.retro = RetroMode::zero;
  c.training.optimizer = OptimizerKind::sgd;
  c.data.patch = PatchGrid{16, 8};
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.plasticity.offsets, (std::vector<std::size_t>{1, 2}));
}

TEST(Config, UnknownKeyNamesItsPath) {
  nlohmann::json j = RunConfig{}.to_json();
  j["training"]["epochz"] = 3;
  try {
    RunConfig::from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "training.epochz");
  }
}

TEST(Config, InvalidValuesNameTheirField) {
  auto field_of = [](nlohmann::json j) {
    try {
      RunConfig::from_json(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  const nlohmann::json base = RunConfig{}.to_json();
  auto j = base;
  j["plasticity"]["eta"] = -1;
  EXPECT_EQ(field_of(j), "plasticity.eta");
  j = base;
  j["plasticity"]["mode"] = "backprop";
  EXPECT_EQ(field_of(j), "plasticity.mode");
  j = base;
  j["training"]["p_switch"] = 2;
  EXPECT_EQ(field_of(j), "training.p_switch");
  j = base;
  j["encoder"]["widths"] = {8, 0};
  EXPECT_EQ(field_of(j), "encoder.widths[1]");
  j = base;
  j["seed"] = "seven";
  EXPECT_EQ(field_of(j), "seed");
}

TEST(Config, ScalarOffsetAccepted) {
  nlohmann::json j = RunConfig{}.to_json();
  j["plasticity"]["delta_t"] = 3;
  EXPECT_EQ(RunConfig::from_json(j).plasticity.offsets, (std::vector<std::size_t>{3}));
}

TEST(Config, LoadConfigReportsMalformedJson) {
  TempDir dir("cfg");
  const auto p = dir.path() / "bad.json";
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(load_config(p), ConfigError);
  EXPECT_THROW(load_config(dir.path() / "missing.json"), InputError);
}

}  // namespace
}  // namespace clapp
