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

// The runnable experiments behind the command-line tool.
//
// Output directory of `train`:
//   config.json            the resolved configuration
//   metrics.csv            step,layer,mode,loss,margin_violation_rate,update_norm
//   epochs.csv             epoch,layer,mean_loss,margin_violation_rate,events,skipped
//   checkpoint/            latest checkpoint
//   checkpoints/epoch_NNN/ one checkpoint per epoch (epoch_000 is the initialization)

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "clapp/config.hpp"
#include "clapp/io.hpp"
#include "clapp/probe.hpp"
#include "clapp/training.hpp"
#include "clapp/verify.hpp"

namespace clapp {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitGradcheck = 3 };

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return RunConfig::from_json(j);
}

inline std::string epoch_dir_name(std::size_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(3) << std::setfill('0') << epoch;
  return os.str();
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  std::vector<EpochSummary> epochs;
  fs::path checkpoint;
  fs::path metrics;
};

inline TrainResult cmd_train(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const Dataset ds = load_source(cfg.data.train, cfg.data);
  const SequenceCorpus corpus(ds, cfg.data.patch);
  Trainer trainer(build_encoder(cfg.encoder, step_shape(corpus)), corpus, cfg.plasticity,
                  cfg.training, cfg.seed);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const nlohmann::json cj = cfg.to_json();
  atomic_write_text(out / "config.json", cj.dump(2) + "\n");

  TrainResult result;
  result.metrics = out / "metrics.csv";
  result.checkpoint = out / "checkpoint";
  const fs::path metrics_tmp = fs::path(result.metrics).concat(".tmp");
  std::ofstream metrics(metrics_tmp, std::ios::trunc);
  if (!metrics) throw InputError("cannot write " + metrics_tmp.string());
  metrics << metrics_header() << '\n';
  metrics << std::setprecision(9);
  std::ostringstream epochs_csv;
  epochs_csv << "epoch,layer,mean_loss,margin_violation_rate,events,skipped\n"
             << std::setprecision(9);

  save_checkpoint(trainer.checkpoint(cj), out / "checkpoints" / epoch_dir_name(0));
  for (std::size_t e = 0; e < cfg.training.epochs; ++e) {
    EpochSummary s = trainer.run_epoch(&metrics);
    if (e + 1 == cfg.training.epochs) trainer.flush(&metrics);
    for (std::size_t l = 0; l < s.layer_loss.size(); ++l) {
      epochs_csv << s.epoch << ',' << l << ',' << s.layer_loss[l] << ','
                 << s.violation_rate[l] << ',' << s.events << ',' << s.skipped << '\n';
    }
    if (log) {
      *log << "epoch " << s.epoch << ": mean loss " << s.mean_loss << " (";
      for (std::size_t l = 0; l < s.layer_loss.size(); ++l)
        *log << (l ? ", " : "") << "layer " << l << " " << s.layer_loss[l];
      *log << ")\n";
    }
    save_checkpoint(trainer.checkpoint(cj), out / "checkpoints" / epoch_dir_name(s.epoch));
    result.epochs.push_back(std::move(s));
  }
  save_checkpoint(trainer.checkpoint(cj), result.checkpoint);
  metrics.close();
  fs::rename(metrics_tmp, result.metrics);
  atomic_write_text(out / "epochs.csv", epochs_csv.str());
  return result;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeRow {
  std::size_t layer = 0;
  std::string split;
  double accuracy = 0;
  std::size_t n_samples = 0;
};

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::ostringstream os;
  os << "layer,split,accuracy,n_samples\n" << std::setprecision(9);
  for (const auto& r : rows)
    os << r.layer << ',' << r.split << ',' << r.accuracy << ',' << r.n_samples << '\n';
  return os.str();
}

inline std::size_t feature_layers(const Checkpoint& ck) {
  return ck.encoder.num_layers() + (ck.gru ? 1 : 0);
}

/// Trains one probe per layer on the probe training split and reports train
/// and test accuracy. Encoder weights are read-only throughout.
inline std::vector<ProbeRow> probe_checkpoint(const Checkpoint& ck, const RunConfig& cfg,
                                              std::vector<std::size_t> layers,
                                              std::size_t workers = 1) {
  if (layers.empty()) {
    for (std::size_t l = 0; l < feature_layers(ck); ++l) layers.push_back(l);
  }
  for (auto l : layers) {
    if (l >= feature_layers(ck)) {
      throw InputError("probe layer " + std::to_string(l) + " out of range (checkpoint has " +
                       std::to_string(feature_layers(ck)) + " feature layers)");
    }
  }
  const DataSource& train_src = cfg.data.probe_train.empty() ? cfg.data.train : cfg.data.probe_train;
  const Dataset train_ds = load_source(train_src, cfg.data);
  const SequenceCorpus train_corpus(train_ds, cfg.data.patch);
  std::optional<Dataset> test_ds;
  std::optional<SequenceCorpus> test_corpus;
  if (!cfg.data.probe_test.empty()) {
    test_ds = load_source(cfg.data.probe_test, cfg.data);
    test_corpus.emplace(*test_ds, cfg.data.patch);
  }
  const GruParams<float>* gru = ck.gru ? &*ck.gru : nullptr;
  ProbeOptions po;
  po.epochs = cfg.probe.epochs;
  po.lr = cfg.probe.lr;
  po.optimizer = cfg.probe.optimizer;
  po.batch_size = cfg.probe.batch_size;
  po.standardize = cfg.probe.standardize;
  po.seed = derive_seed(cfg.seed, kSeedProbe);

  std::vector<ProbeRow> rows;
  for (auto l : layers) {
    const FeatureSet train_f = extract_features(ck.encoder, train_corpus, l, gru, workers);
    const ProbeModel m = train_probe(train_f, po, l);
    rows.push_back({l, "train", evaluate(m, train_f), train_f.size()});
    if (test_corpus) {
      const FeatureSet test_f = extract_features(ck.encoder, *test_corpus, l, gru, workers);
      rows.push_back({l, "test", evaluate(m, test_f), test_f.size()});
    }
  }
  return rows;
}

inline std::vector<ProbeRow> cmd_probe(const fs::path& checkpoint, const RunConfig& cfg,
                                       const std::vector<std::size_t>& layers,
                                       std::size_t workers, const fs::path& out_csv) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto rows = probe_checkpoint(ck, cfg, layers, workers);
  atomic_write_text(out_csv, probe_csv(rows));
  return rows;
}

// ---------------------------------------------------------------------------
// export-embeddings

inline std::string format_feature(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string embeddings_csv(const FeatureSet& f) {
  std::ostringstream os;
  const std::size_t d = f.features.rank() == 2 ? f.features.dim(1) : 0;
  os << "id,label";
  for (std::size_t k = 0; k < d; ++k) os << ",f" << k;
  os << '\n';
  for (std::size_t i = 0; i < f.size(); ++i) {
    os << f.ids[i] << ',' << f.labels[i];
    for (std::size_t k = 0; k < d; ++k) os << ',' << format_feature(f.features(i, k));
    os << '\n';
  }
  return os.str();
}

/// One row per sample of `src`: id, label (-1 if unlabeled), pooled features.
inline FeatureSet cmd_export_embeddings(const fs::path& checkpoint, const RunConfig& cfg,
                                        const DataSource& src, std::size_t layer,
                                        std::size_t workers, const fs::path& out_csv) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (layer >= feature_layers(ck)) {
    throw InputError("layer " + std::to_string(layer) + " out of range");
  }
  const Dataset ds = load_source(src, cfg.data);
  const SequenceCorpus corpus(ds, cfg.data.patch);
  FeatureSet f = extract_features(ck.encoder, corpus, layer, ck.gru ? &*ck.gru : nullptr, workers);
  atomic_write_text(out_csv, embeddings_csv(f));
  return f;
}

// ---------------------------------------------------------------------------
// stream-preview, make-synthetic, gradcheck

inline void cmd_stream_preview(const RunConfig& cfg, std::size_t count, std::ostream& os) {
  cfg.validate();
  const Dataset ds = load_source(cfg.data.train, cfg.data);
  const SequenceCorpus corpus(ds, cfg.data.patch);
  FixationSaccadeStream stream(corpus, cfg.training.p_switch, derive_seed(cfg.seed, kSeedStream));
  os << "t,source_id,y,sequence,position,shape\n";
  for (std::size_t k = 0; k < count; ++k) {
    const StreamEvent e = stream.next();
    os << e.t << ',' << e.source_id << ',' << e.y << ',' << e.sequence << ',' << e.position
       << ',' << shape_str(e.x.shape()) << '\n';
  }
}

/// Writes every synthetic source of the config as an on-disk dataset under
/// `out/<split>/`.
inline std::vector<fs::path> cmd_make_synthetic(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  std::vector<fs::path> written;
  const std::pair<const char*, const DataSource*> splits[] = {
      {"train", &cfg.data.train},
      {"probe_train", &cfg.data.probe_train},
      {"probe_test", &cfg.data.probe_test}};
  for (const auto& [name, src] : splits) {
    if (!src->synthetic) continue;
    save_dataset(synthetic_sequence_dataset(*src->synthetic), out / name);
    written.push_back(out / name / "index.json");
  }
  return written;
}

inline int cmd_gradcheck(const std::string& scope, const verify::VerifyOptions& opts,
                         const std::optional<fs::path>& report_path, std::ostream& os) {
  const verify::EquivalenceReport r = verify::equivalence_report(scope, opts);
  os << r.summary();
  if (report_path) atomic_write_text(*report_path, r.to_json().dump(2) + "\n");
  return r.passed() ? kExitOk : kExitGradcheck;
}

}  // namespace clapp
