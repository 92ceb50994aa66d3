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

// Run configuration. A run is fully determined by (RunConfig, seed); the JSON
// form round-trips exactly and every parse error names the offending field.
//
// {
//   "seed": 0,
//   "output_dir": "clapp_run",
//   "encoder":    {"preset": "dense", "widths": [64, 64], "activation": "relu",
//                  "width_divisor": 8, "depth": 6},
//   "plasticity": {"mode": "clapp", "eta": 0.001, "delta_t": [1], "n_negatives": 16,
//                  "context": "same_layer", "retro": "learned", "module_sizes": []},
//   "training":   {"epochs": 20, "batch_size": 32, "steps_per_epoch": 0, "p_switch": 0.5,
//                  "optimizer": "adam", "tied_init": false, "gru_hidden": 0},
//   "probe":      {"epochs": 200, "lr": 0.01, "optimizer": "adam", "batch_size": 32,
//                  "standardize": true, "layers": []},
//   "data":       {"train": {...}, "probe_train": {...}, "probe_test": {...},
//                  "patch": null, "grayscale": false}
// }
//
// A data source is either {"index": "path/to/index.json"} or
// {"synthetic": {n_classes, dim, steps, samples_per_class, noise_level, seed,
// noise_seed, latent_dim, groups, fine_scale, distractor, distractor_dims,
// first_id}}. Under "optimizer": "adam" the hinge gate H is 0/1 and eta is the
// Adam step size; under "sgd" H is 0/eta and updates are applied as is.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clapp/optimizer.hpp"
#include "clapp/plasticity.hpp"
#include "clapp/stream.hpp"

namespace clapp {

struct DataSource {
  std::string index;
  std::optional<SyntheticSpec> synthetic;

  bool empty() const { return index.empty() && !synthetic; }
};

struct DataConfig {
  DataSource train, probe_train, probe_test;
  std::optional<PatchGrid> patch;
  bool grayscale = false;
};

struct EncoderConfig {
  std::string preset = "dense";  // "dense" or "vgg6"
  std::vector<std::size_t> widths{64, 64};
  Activation activation = Activation::relu;
  std::size_t width_divisor = 8;
  std::size_t depth = 6;
};

struct TrainingConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  /// Stream events per epoch; 0 means one pass worth of steps over the corpus.
  std::size_t steps_per_epoch = 0;
  double p_switch = 0.5;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool tied_init = false;
  /// Hidden size of a recurrent top layer trained with eligibility traces
  /// (clapp mode only); 0 disables it.
  std::size_t gru_hidden = 0;
};

struct ProbeConfig {
  std::size_t epochs = 200;
  double lr = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t batch_size = 32;
  bool standardize = true;
  std::vector<std::size_t> layers;  // empty: every layer
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "clapp_run";
  EncoderConfig encoder;
  HyperParams plasticity;
  TrainingConfig training;
  ProbeConfig probe;
  DataConfig data;

  RunConfig();

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------

namespace config_detail {

/// Desk-scale synthetic task: 8 classes in two groups of four.
inline SyntheticSpec default_synthetic() {
  SyntheticSpec s;
  s.n_classes = 8;
  s.dim = 32;
  s.steps = 16;
  s.samples_per_class = 32;
  s.noise_level = 1.0;
  s.fine_scale = 0.3;
  s.seed = 7;
  return s;
}

inline void check_keys(const nlohmann::json& j, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(path.empty() ? k : path + "." + k, "unknown field");
  }
}

template <typename T>
void read(const nlohmann::json& j, const std::string& key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  const std::string field = path.empty() ? key : path + "." + key;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(field, "has the wrong type");
  }
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

template <typename E>
E read_enum(const nlohmann::json& j, const std::string& key, const std::string& path, E current,
            const std::vector<std::pair<std::string, E>>& table) {
  if (!j.contains(key)) return current;
  std::string s;
  read(j, key, path, s);
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string options;
  for (const auto& [name, value] : table) options += (options.empty() ? "" : ", ") + name;
  throw ConfigError(join(path, key), "must be one of " + options + " (got '" + s + "')");
}

inline const std::vector<std::pair<std::string, Mode>>& mode_table() {
  static const std::vector<std::pair<std::string, Mode>> t{{"clapp", Mode::clapp},
                                                           {"clapp_s", Mode::clapp_s},
                                                           {"hinge_cpc", Mode::hinge_cpc},
                                                           {"cpc_gim", Mode::cpc_gim}};
  return t;
}
inline const std::vector<std::pair<std::string, ContextSource>>& context_table() {
  static const std::vector<std::pair<std::string, ContextSource>> t{
      {"same_layer", ContextSource::same_layer}, {"layer_above", ContextSource::layer_above}};
  return t;
}
inline const std::vector<std::pair<std::string, RetroMode>>& retro_table() {
  static const std::vector<std::pair<std::string, RetroMode>> t{
      {"learned", RetroMode::learned}, {"transpose", RetroMode::transpose},
      {"zero", RetroMode::zero}};
  return t;
}
inline const std::vector<std::pair<std::string, OptimizerKind>>& optimizer_table() {
  static const std::vector<std::pair<std::string, OptimizerKind>> t{
      {"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}};
  return t;
}
inline const std::vector<std::pair<std::string, Activation>>& activation_table() {
  static const std::vector<std::pair<std::string, Activation>> t{
      {"relu", Activation::relu}, {"linear", Activation::linear}};
  return t;
}

template <typename E>
std::string enum_name(E v, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

inline nlohmann::json synthetic_json(const SyntheticSpec& s) {
  nlohmann::json j = {{"n_classes", s.n_classes},
                      {"dim", s.dim},
                      {"steps", s.steps},
                      {"samples_per_class", s.samples_per_class},
                      {"noise_level", s.noise_level},
                      {"seed", s.seed},
                      {"latent_dim", s.latent_dim},
                      {"groups", s.groups},
                      {"fine_scale", s.fine_scale},
                      {"distractor", s.distractor},
                      {"distractor_dims", s.distractor_dims},
                      {"first_id", s.first_id}};
  j["noise_seed"] = s.noise_seed ? nlohmann::json(*s.noise_seed) : nlohmann::json(nullptr);
  return j;
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j, const std::string& path) {
  check_keys(j, path,
             {"n_classes", "dim", "steps", "samples_per_class", "noise_level", "seed",
              "noise_seed", "latent_dim", "groups", "fine_scale", "distractor",
              "distractor_dims", "first_id"});
  SyntheticSpec s;
  read(j, "n_classes", path, s.n_classes);
  read(j, "dim", path, s.dim);
  read(j, "steps", path, s.steps);
  read(j, "samples_per_class", path, s.samples_per_class);
  read(j, "noise_level", path, s.noise_level);
  read(j, "seed", path, s.seed);
  read(j, "latent_dim", path, s.latent_dim);
  read(j, "groups", path, s.groups);
  read(j, "fine_scale", path, s.fine_scale);
  read(j, "distractor", path, s.distractor);
  read(j, "distractor_dims", path, s.distractor_dims);
  read(j, "first_id", path, s.first_id);
  if (j.contains("noise_seed") && !j["noise_seed"].is_null()) {
    std::uint64_t v = 0;
    read(j, "noise_seed", path, v);
    s.noise_seed = v;
  }
  return s;
}

inline nlohmann::json source_json(const DataSource& s) {
  if (s.synthetic) return {{"synthetic", synthetic_json(*s.synthetic)}};
  if (!s.index.empty()) return {{"index", s.index}};
  return nullptr;
}

inline DataSource source_from_json(const nlohmann::json& j, const std::string& path) {
  DataSource s;
  if (j.is_null()) return s;
  check_keys(j, path, {"index", "synthetic"});
  read(j, "index", path, s.index);
  if (j.contains("synthetic")) s.synthetic = synthetic_from_json(j["synthetic"], join(path, "synthetic"));
  if (!s.index.empty() && s.synthetic) {
    throw ConfigError(path, "give either 'index' or 'synthetic', not both");
  }
  return s;
}

inline void validate_synthetic(const SyntheticSpec& s, const std::string& path) {
  if (s.n_classes < 2) throw ConfigError(path + ".n_classes", "must be at least 2");
  if (s.dim == 0) throw ConfigError(path + ".dim", "must be positive");
  if (s.steps == 0) throw ConfigError(path + ".steps", "must be positive");
  if (s.samples_per_class == 0) throw ConfigError(path + ".samples_per_class", "must be positive");
  if (s.latent_dim == 0) throw ConfigError(path + ".latent_dim", "must be positive");
  if (!(s.noise_level >= 0)) throw ConfigError(path + ".noise_level", "must be non-negative");
  if (!(s.distractor >= 0)) throw ConfigError(path + ".distractor", "must be non-negative");
}

}  // namespace config_detail

inline RunConfig::RunConfig() {
  using config_detail::default_synthetic;
  plasticity.eta = 1e-3;
  SyntheticSpec train = default_synthetic();
  train.noise_seed = 101;
  SyntheticSpec probe_train = default_synthetic();
  probe_train.samples_per_class = 10;
  probe_train.noise_seed = 202;
  probe_train.first_id = 100000;
  SyntheticSpec probe_test = default_synthetic();
  probe_test.samples_per_class = 40;
  probe_test.noise_seed = 303;
  probe_test.first_id = 200000;
  data.train.synthetic = train;
  data.probe_train.synthetic = probe_train;
  data.probe_test.synthetic = probe_test;
}

inline void RunConfig::validate() const {
  using config_detail::validate_synthetic;
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (encoder.preset != "dense" && encoder.preset != "vgg6") {
    throw ConfigError("encoder.preset", "must be 'dense' or 'vgg6'");
  }
  if (encoder.preset == "dense") {
    if (encoder.widths.empty()) throw ConfigError("encoder.widths", "needs at least one layer");
    for (std::size_t i = 0; i < encoder.widths.size(); ++i)
      if (encoder.widths[i] == 0)
        throw ConfigError("encoder.widths[" + std::to_string(i) + "]", "must be positive");
  } else {
    if (encoder.width_divisor == 0) throw ConfigError("encoder.width_divisor", "must be positive");
    if (encoder.depth == 0 || encoder.depth > 6) {
      throw ConfigError("encoder.depth", "must lie in [1, 6]");
    }
  }
  if (!(plasticity.eta > 0)) throw ConfigError("plasticity.eta", "must be positive");
  if (plasticity.offsets.empty()) throw ConfigError("plasticity.delta_t", "needs an offset");
  for (auto d : plasticity.offsets)
    if (d < 1) throw ConfigError("plasticity.delta_t", "offsets must be >= 1");
  if (is_synchronous(plasticity.mode) && plasticity.n_negatives < 1) {
    throw ConfigError("plasticity.n_negatives", "must be >= 1 in synchronous modes");
  }
  if (plasticity.mode == Mode::clapp || plasticity.mode == Mode::clapp_s) {
    for (auto m : plasticity.module_sizes)
      if (m != 1) throw ConfigError("plasticity.module_sizes", "local modes use one layer per module");
  }
  for (auto m : plasticity.module_sizes)
    if (m == 0) throw ConfigError("plasticity.module_sizes", "entries must be positive");
  if (training.batch_size == 0) throw ConfigError("training.batch_size", "must be positive");
  if (!(training.p_switch >= 0 && training.p_switch <= 1)) {
    throw ConfigError("training.p_switch", "must lie in [0, 1]");
  }
  if (training.gru_hidden > 0 && plasticity.mode != Mode::clapp) {
    throw ConfigError("training.gru_hidden", "the recurrent layer is trained in clapp mode only");
  }
  if (!(probe.lr > 0)) throw ConfigError("probe.lr", "must be positive");
  if (probe.batch_size == 0) throw ConfigError("probe.batch_size", "must be positive");
  if (data.train.empty()) throw ConfigError("data.train", "a training source is required");
  if (data.train.synthetic) validate_synthetic(*data.train.synthetic, "data.train.synthetic");
  if (data.probe_train.synthetic)
    validate_synthetic(*data.probe_train.synthetic, "data.probe_train.synthetic");
  if (data.probe_test.synthetic)
    validate_synthetic(*data.probe_test.synthetic, "data.probe_test.synthetic");
  if (data.patch && (data.patch->patch_size == 0 || data.patch->stride == 0)) {
    throw ConfigError("data.patch", "patch size and stride must be positive");
  }
}

inline nlohmann::json RunConfig::to_json() const {
  using namespace config_detail;
  nlohmann::json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["encoder"] = {{"preset", encoder.preset},
                  {"widths", encoder.widths},
                  {"activation", enum_name(encoder.activation, activation_table())},
                  {"width_divisor", encoder.width_divisor},
                  {"depth", encoder.depth}};
  j["plasticity"] = {{"mode", enum_name(plasticity.mode, mode_table())},
                     {"eta", plasticity.eta},
                     {"delta_t", plasticity.offsets},
                     {"n_negatives", plasticity.n_negatives},
                     {"context", enum_name(plasticity.context, context_table())},
                     {"retro", enum_name(plasticity.retro, retro_table())},
                     {"module_sizes", plasticity.module_sizes}};
  j["training"] = {{"epochs", training.epochs},
                   {"batch_size", training.batch_size},
                   {"steps_per_epoch", training.steps_per_epoch},
                   {"p_switch", training.p_switch},
                   {"optimizer", enum_name(training.optimizer, optimizer_table())},
                   {"tied_init", training.tied_init},
                   {"gru_hidden", training.gru_hidden}};
  j["probe"] = {{"epochs", probe.epochs},
                {"lr", probe.lr},
                {"optimizer", enum_name(probe.optimizer, optimizer_table())},
                {"batch_size", probe.batch_size},
                {"standardize", probe.standardize},
                {"layers", probe.layers}};
  j["data"] = {{"train", source_json(data.train)},
               {"probe_train", source_json(data.probe_train)},
               {"probe_test", source_json(data.probe_test)},
               {"grayscale", data.grayscale}};
  j["data"]["patch"] = data.patch ? nlohmann::json{{"size", data.patch->patch_size},
                                                   {"stride", data.patch->stride}}
                                  : nlohmann::json(nullptr);
  return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using namespace config_detail;
  RunConfig c;
  check_keys(j, "", {"seed", "output_dir", "encoder", "plasticity", "training", "probe", "data"});
  read(j, "seed", "", c.seed);
  read(j, "output_dir", "", c.output_dir);

  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    check_keys(e, "encoder", {"preset", "widths", "activation", "width_divisor", "depth"});
    read(e, "preset", "encoder", c.encoder.preset);
    read(e, "widths", "encoder", c.encoder.widths);
    c.encoder.activation = read_enum(e, "activation", "encoder", c.encoder.activation,
                                     activation_table());
    read(e, "width_divisor", "encoder", c.encoder.width_divisor);
    read(e, "depth", "encoder", c.encoder.depth);
  }
  if (j.contains("plasticity")) {
    const auto& p = j["plasticity"];
    check_keys(p, "plasticity",
               {"mode", "eta", "delta_t", "n_negatives", "context", "retro", "module_sizes"});
    c.plasticity.mode = read_enum(p, "mode", "plasticity", c.plasticity.mode, mode_table());
    read(p, "eta", "plasticity", c.plasticity.eta);
    if (p.contains("delta_t")) {
      if (p["delta_t"].is_array()) {
        read(p, "delta_t", "plasticity", c.plasticity.offsets);
      } else {
        std::size_t d = 1;
        read(p, "delta_t", "plasticity", d);
        c.plasticity.offsets = {d};
      }
    }
    read(p, "n_negatives", "plasticity", c.plasticity.n_negatives);
    c.plasticity.context =
        read_enum(p, "context", "plasticity", c.plasticity.context, context_table());
    c.plasticity.retro = read_enum(p, "retro", "plasticity", c.plasticity.retro, retro_table());
    read(p, "module_sizes", "plasticity", c.plasticity.module_sizes);
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    check_keys(t, "training",
               {"epochs", "batch_size", "steps_per_epoch", "p_switch", "optimizer", "tied_init",
                "gru_hidden"});
    read(t, "epochs", "training", c.training.epochs);
    read(t, "batch_size", "training", c.training.batch_size);
    read(t, "steps_per_epoch", "training", c.training.steps_per_epoch);
    read(t, "p_switch", "training", c.training.p_switch);
    c.training.optimizer =
        read_enum(t, "optimizer", "training", c.training.optimizer, optimizer_table());
    read(t, "tied_init", "training", c.training.tied_init);
    read(t, "gru_hidden", "training", c.training.gru_hidden);
  }
  if (j.contains("probe")) {
    const auto& p = j["probe"];
    check_keys(p, "probe", {"epochs", "lr", "optimizer", "batch_size", "standardize", "layers"});
    read(p, "epochs", "probe", c.probe.epochs);
    read(p, "lr", "probe", c.probe.lr);
    c.probe.optimizer = read_enum(p, "optimizer", "probe", c.probe.optimizer, optimizer_table());
    read(p, "batch_size", "probe", c.probe.batch_size);
    read(p, "standardize", "probe", c.probe.standardize);
    read(p, "layers", "probe", c.probe.layers);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"train", "probe_train", "probe_test", "patch", "grayscale"});
    if (d.contains("train")) c.data.train = source_from_json(d["train"], "data.train");
    if (d.contains("probe_train"))
      c.data.probe_train = source_from_json(d["probe_train"], "data.probe_train");
    if (d.contains("probe_test"))
      c.data.probe_test = source_from_json(d["probe_test"], "data.probe_test");
    read(d, "grayscale", "data", c.data.grayscale);
    if (d.contains("patch") && !d["patch"].is_null()) {
      check_keys(d["patch"], "data.patch", {"size", "stride"});
      PatchGrid g;
      read(d["patch"], "size", "data.patch", g.patch_size);
      read(d["patch"], "stride", "data.patch", g.stride);
      c.data.patch = g;
    }
  }
  c.validate();
  return c;
}

}  // namespace clapp
