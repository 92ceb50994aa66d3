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

// On-disk formats. Tensors are raw little-endian float32 blobs, row-major,
// referenced from a JSON document that carries their shapes.
//
//   dataset:    <dir>/index.json  {"samples": [{id, shape, dtype: "f32le", path, label?}]}
//   checkpoint: <dir>/manifest.json + <dir>/tensors/*.f32
//
// Every writer builds its output under a sibling temp path and renames it into
// place, so readers never observe a half-written file or directory.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clapp/plasticity.hpp"
#include "clapp/recurrent.hpp"
#include "clapp/stream.hpp"

namespace clapp {

namespace fs = std::filesystem;

namespace io_detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

inline fs::path temp_sibling(const fs::path& target) {
  fs::path t = target;
  t += ".tmp";
  return t;
}

}  // namespace io_detail

/// Writes `content` to `path` via a temp file and rename.
inline void atomic_write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = io_detail::temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << content;
    if (!out) throw InputError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Replaces directory `target` by the fully written directory `staged`.
inline void atomic_replace_dir(const fs::path& staged, const fs::path& target) {
  if (fs::exists(target)) {
    fs::path old = target;
    old += ".old";
    fs::remove_all(old);
    fs::rename(target, old);
    fs::rename(staged, target);
    fs::remove_all(old);
  } else {
    fs::rename(staged, target);
  }
}

inline void write_f32le(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (float v : values) {
    std::uint32_t bits = io_detail::to_little(std::bit_cast<std::uint32_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw InputError("write failed for " + path.string());
}

inline std::vector<float> read_f32le(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing tensor blob " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * 4) {
    throw InputError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                     std::to_string(count * 4));
  }
  in.seekg(0);
  std::vector<float> values(count);
  for (auto& v : values) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    v = std::bit_cast<float>(io_detail::to_little(bits));
  }
  return values;
}

template <typename T>
void write_tensor(const fs::path& path, const Tensor<T>& t) {
  std::vector<float> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<float>(t[i]);
  write_f32le(path, v);
}

template <typename T>
Tensor<T> read_tensor(const fs::path& path, const Shape& shape) {
  const std::vector<float> v = read_f32le(path, shape_size(shape));
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
  return t;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

/// Writes `ds` as `<dir>/index.json` plus one blob per sample.
inline void save_dataset(const Dataset& ds, const fs::path& dir) {
  check_unique_ids(ds);
  const fs::path staged = io_detail::temp_sibling(dir);
  fs::remove_all(staged);
  fs::create_directories(staged / "blobs");
  nlohmann::json index;
  index["samples"] = nlohmann::json::array();
  for (const auto& s : ds) {
    const std::string rel = "blobs/" + std::to_string(s.id) + ".f32";
    write_tensor(staged / rel, s.tensor);
    nlohmann::json e = {{"id", s.id}, {"shape", s.tensor.shape()}, {"dtype", "f32le"},
                        {"path", rel}};
    if (s.label) e["label"] = *s.label;
    index["samples"].push_back(e);
  }
  {
    std::ofstream out(staged / "index.json");
    out << index.dump(1) << '\n';
  }
  atomic_replace_dir(staged, dir);
}

/// Reads a dataset from its index file (or a directory containing
/// index.json). Blob paths are relative to the index's directory.
inline Dataset load_dataset(const fs::path& where) {
  const fs::path index_path = fs::is_directory(where) ? where / "index.json" : where;
  if (!fs::exists(index_path)) throw InputError("dataset index not found: " + index_path.string());
  const nlohmann::json index = read_json(index_path);
  if (!index.contains("samples") || !index["samples"].is_array()) {
    throw InputError(index_path.string() + ": missing 'samples' array");
  }
  const fs::path base = index_path.parent_path();
  Dataset ds;
  for (const auto& e : index["samples"]) {
    try {
      if (e.value("dtype", "f32le") != "f32le") {
        throw InputError("unsupported dtype " + e["dtype"].get<std::string>());
      }
      Sample s;
      s.id = e.at("id").get<std::int64_t>();
      const Shape shape = e.at("shape").get<Shape>();
      s.tensor = read_tensor<float>(base / e.at("path").get<std::string>(), shape);
      if (e.contains("label") && !e["label"].is_null()) s.label = e["label"].get<int>();
      ds.push_back(std::move(s));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError(index_path.string() + ": bad sample entry: " + ex.what());
    }
  }
  check_unique_ids(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json layer_spec_json(const LayerSpec& s) {
  nlohmann::json j = {{"kind", to_string(s.kind)},       {"in", s.in},
                      {"out", s.out},                    {"kernel", s.kernel},
                      {"stride", s.stride},              {"pad", s.pad},
                      {"activation", to_string(s.activation)}};
  if (s.pool) j["pool"] = {{"window", s.pool->window}, {"stride", s.pool->stride}};
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "dense" && kind != "conv") throw InputError("unknown layer kind " + kind);
  s.kind = kind == "dense" ? LayerKind::dense : LayerKind::conv;
  s.in = j.at("in").get<std::size_t>();
  s.out = j.at("out").get<std::size_t>();
  s.kernel = j.value("kernel", std::size_t{1});
  s.stride = j.value("stride", std::size_t{1});
  s.pad = j.value("pad", std::size_t{0});
  const std::string act = j.value("activation", std::string("relu"));
  if (act != "relu" && act != "linear") throw InputError("unknown activation " + act);
  s.activation = act == "relu" ? Activation::relu : Activation::linear;
  if (j.contains("pool") && !j["pool"].is_null()) {
    s.pool = PoolSpec{j["pool"].at("window").get<std::size_t>(),
                      j["pool"].at("stride").get<std::size_t>()};
  }
  return s;
}

/// Everything a trained run needs to resume or to be probed.
struct Checkpoint {
  Encoder<float> encoder;
  std::vector<PredictorHead<float>> heads;
  std::optional<GruParams<float>> gru;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  nlohmann::json config;  // the run configuration, stored for provenance
};

inline void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  const fs::path staged = io_detail::temp_sibling(dir);
  fs::remove_all(staged);
  fs::create_directories(staged / "tensors");
  nlohmann::json m;
  m["format"] = "clapp-checkpoint-1";
  m["seed"] = ck.seed;
  m["step"] = ck.step;
  m["epoch"] = ck.epoch;
  m["input_shape"] = ck.encoder.input_shape();
  m["config"] = ck.config;
  auto put = [&](const std::string& name, const Tensor<float>& t) {
    const std::string rel = "tensors/" + name + ".f32";
    write_tensor(staged / rel, t);
    return nlohmann::json{{"shape", t.shape()}, {"dtype", "f32le"}, {"path", rel}};
  };
  m["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < ck.encoder.num_layers(); ++l) {
    nlohmann::json jl = layer_spec_json(ck.encoder.spec(l));
    jl["weight"] = put("layer" + std::to_string(l) + ".weight", ck.encoder.params(l).weight);
    jl["bias"] = put("layer" + std::to_string(l) + ".bias", ck.encoder.params(l).bias);
    m["layers"].push_back(jl);
  }
  m["heads"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.heads.size(); ++i) {
    const auto& h = ck.heads[i];
    m["heads"].push_back({{"z_layer", h.z_layer},
                          {"c_layer", h.c_layer},
                          {"delta_t", h.delta_t},
                          {"w_pred", put("head" + std::to_string(i) + ".w_pred", h.w_pred)},
                          {"w_retro", put("head" + std::to_string(i) + ".w_retro", h.w_retro)}});
  }
  if (ck.gru) {
    nlohmann::json g;
    for (std::size_t k = 0; k < GruParams<float>::kCount; ++k)
      g[GruParams<float>::name(k)] =
          put(std::string("gru.") + GruParams<float>::name(k), ck.gru->t[k]);
    m["gru"] = g;
  }
  {
    std::ofstream out(staged / "manifest.json");
    out << m.dump(1) << '\n';
    if (!out) throw InputError("cannot write checkpoint manifest");
  }
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  atomic_replace_dir(staged, dir);
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw InputError("checkpoint manifest not found: " + mpath.string());
  const nlohmann::json m = read_json(mpath);
  auto get = [&](const nlohmann::json& e) {
    return read_tensor<float>(dir / e.at("path").get<std::string>(), e.at("shape").get<Shape>());
  };
  try {
    Checkpoint ck;
    std::vector<LayerSpec> specs;
    for (const auto& jl : m.at("layers")) specs.push_back(layer_spec_from_json(jl));
    ck.encoder = Encoder<float>(specs, m.at("input_shape").get<Shape>());
    for (std::size_t l = 0; l < specs.size(); ++l) {
      Tensor<float> w = get(m["layers"][l].at("weight"));
      Tensor<float> b = get(m["layers"][l].at("bias"));
      if (w.shape() != specs[l].weight_shape() || b.shape() != Shape{specs[l].out}) {
        throw DimensionError("checkpoint tensor shapes disagree with layer " +
                             std::to_string(l) + " spec");
      }
      ck.encoder.params(l) = {std::move(w), std::move(b)};
    }
    for (const auto& jh : m.value("heads", nlohmann::json::array())) {
      PredictorHead<float> h;
      h.z_layer = jh.at("z_layer").get<std::size_t>();
      h.c_layer = jh.at("c_layer").get<std::size_t>();
      h.delta_t = jh.at("delta_t").get<std::size_t>();
      h.w_pred = get(jh.at("w_pred"));
      h.w_retro = get(jh.at("w_retro"));
      ck.heads.push_back(std::move(h));
    }
    if (m.contains("gru")) {
      GruParams<float> g;
      for (std::size_t k = 0; k < GruParams<float>::kCount; ++k)
        g.t[k] = get(m["gru"].at(GruParams<float>::name(k)));
      g.validate();
      ck.gru = std::move(g);
    }
    ck.seed = m.value("seed", std::uint64_t{0});
    ck.step = m.value("step", std::size_t{0});
    ck.epoch = m.value("epoch", std::size_t{0});
    ck.config = m.value("config", nlohmann::json::object());
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint manifest " + mpath.string() + ": " + e.what());
  }
}

/// FNV-1a over all encoder parameter bits; used to show evaluation leaves
/// weights untouched.
template <typename T>
std::uint64_t encoder_checksum(const Encoder<T>& enc) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const Tensor<T>& t) {
    for (T v : t.data()) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  };
  for (const auto& p : enc.all_params()) {
    feed(p.weight);
    feed(p.bias);
  }
  return h;
}

}  // namespace clapp
