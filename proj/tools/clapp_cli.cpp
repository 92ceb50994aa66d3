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

// clapp: train, probe and verify CLAPP encoders from the command line.
//
// Exit codes: 0 success, 1 invalid configuration or input, 2 runtime error,
// 3 gradient check breach.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clapp/commands.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string out;
};

clapp::RunConfig resolve(const Globals& g) {
  clapp::RunConfig cfg = g.config.empty() ? clapp::RunConfig{} : clapp::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

const clapp::DataSource& split_source(const clapp::RunConfig& cfg, const std::string& split) {
  if (split == "train") return cfg.data.train;
  if (split == "probe_train") return cfg.data.probe_train;
  if (split == "probe_test") return cfg.data.probe_test;
  throw clapp::InputError("unknown split '" + split + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local self-supervised learning with CLAPP"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--workers", g.workers, "Threads for feature extraction")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory (overrides output_dir)");

  auto* train = app.add_subcommand("train", "Train an encoder with local plasticity");

  auto* probe = app.add_subcommand("probe", "Linear-probe accuracy per layer of a checkpoint");
  std::string probe_ckpt;
  std::vector<std::size_t> probe_layers;
  std::string probe_csv_path;
  probe->add_option("--checkpoint", probe_ckpt, "Checkpoint directory")->required();
  probe->add_option("--layers", probe_layers, "Layers to probe (default: all)");
  probe->add_option("--csv", probe_csv_path, "Output CSV (default: <out>/probe.csv)");

  auto* grad = app.add_subcommand("gradcheck", "Check local rules against gradients of the loss");
  std::string scope = "all";
  clapp::verify::VerifyOptions vopts;
  std::string report;
  grad->add_option("--scope", scope, "Rule name or 'all'");
  grad->add_option("--instances", vopts.instances, "Random instances per rule");
  grad->add_option("--corrupt", vopts.corrupt, "Sign-flip one rule (self-test of the checker)");
  grad->add_option("--report", report, "Write the JSON report here");

  auto* emb = app.add_subcommand("export-embeddings", "Write pooled per-sample features as CSV");
  std::string emb_ckpt, emb_split = "probe_test", emb_csv;
  std::size_t emb_layer = 0;
  emb->add_option("--checkpoint", emb_ckpt, "Checkpoint directory")->required();
  emb->add_option("--layer", emb_layer, "Layer index")->required();
  emb->add_option("--split", emb_split, "train, probe_train or probe_test");
  emb->add_option("--csv", emb_csv, "Output CSV (default: <out>/embeddings_layer<L>.csv)");

  auto* preview = app.add_subcommand("stream-preview", "Print the first events of the stream");
  std::size_t preview_count = 20;
  preview->add_option("--count", preview_count, "Number of events");

  auto* synth = app.add_subcommand("make-synthetic", "Write the configured synthetic datasets to disk");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? clapp::kExitOk : clapp::kExitValidation;
  }

  try {
    if (*grad) {
      std::optional<clapp::fs::path> rp;
      if (!report.empty()) rp = report;
      if (g.seed) vopts.seed = *g.seed;
      return clapp::cmd_gradcheck(scope, vopts, rp, std::cout);
    }
    const clapp::RunConfig cfg = resolve(g);
    if (*train) {
      const auto r = clapp::cmd_train(cfg, &std::cout);
      std::cout << "checkpoint: " << r.checkpoint.string() << "\nmetrics: " << r.metrics.string()
                << "\n";
    } else if (*probe) {
      const clapp::fs::path csv =
          probe_csv_path.empty() ? clapp::fs::path(cfg.output_dir) / "probe.csv" : clapp::fs::path(probe_csv_path);
      const auto rows = clapp::cmd_probe(probe_ckpt, cfg, probe_layers, g.workers, csv);
      std::cout << clapp::probe_csv(rows);
    } else if (*emb) {
      const clapp::fs::path csv =
          emb_csv.empty()
              ? clapp::fs::path(cfg.output_dir) / ("embeddings_layer" + std::to_string(emb_layer) + ".csv")
              : clapp::fs::path(emb_csv);
      const auto f = clapp::cmd_export_embeddings(emb_ckpt, cfg, split_source(cfg, emb_split),
                                                  emb_layer, g.workers, csv);
      std::cout << "wrote " << f.size() << " rows to " << csv.string() << "\n";
    } else if (*preview) {
      clapp::cmd_stream_preview(cfg, preview_count, std::cout);
    } else if (*synth) {
      for (const auto& p : clapp::cmd_make_synthetic(cfg, cfg.output_dir))
        std::cout << p.string() << "\n";
    }
    return clapp::kExitOk;
  } catch (const clapp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return clapp::kExitValidation;
  } catch (const clapp::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return clapp::kExitValidation;
  } catch (const clapp::DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return clapp::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return clapp::kExitRuntime;
  }
}
