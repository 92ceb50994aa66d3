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

// Two ways to use the library.
//
// Part 1 drives the plasticity step by hand: a stream of fixations and
// saccades over a small synthetic corpus, one clapp_step per event, and
// an Adam update every 32 events.
//
// Part 2 runs the packaged pipeline (train, then probe every layer) and
// compares against the untrained encoder.

#include <iostream>
#include <random>

#include "clapp/clapp.hpp"

using namespace clapp;

namespace {

void hand_rolled_loop() {
  SyntheticSpec spec;
  spec.n_classes = 4;
  spec.dim = 16;
  spec.samples_per_class = 8;
  spec.noise_level = 0.5;
  spec.seed = 11;
  const Dataset ds = synthetic_sequence_dataset(spec);
  const SequenceCorpus corpus(ds);

  Encoder<float> enc(dense_preset(spec.dim, {24, 24}), {spec.dim});
  enc.init(1);

  HyperParams hp;
  hp.eta = 1e-3;
  hp.optimizer_scales = false;  // H is 0/1, Adam owns the step size
  auto heads = make_heads(enc, hp, 2, /*tied=*/false);
  TraceBuffer<float> trace(hp.max_offset() + 1);
  UpdateBuffer<float> buf(enc, heads);
  Optimizer<float> opt(OptimizerKind::adam, hp.eta);

  FixationSaccadeStream stream(corpus, 0.5, 3);
  double loss = 0;
  std::size_t counted = 0;
  for (std::size_t t = 1; t <= 2000; ++t) {
    const StreamEvent ev = stream.next();
    for (const auto& s : clapp_step(ev.x, ev.y, ev.source_id, enc, trace, heads, hp, buf)) {
      if (s.skipped) continue;
      loss += s.loss;
      ++counted;
    }
    if (buf.events == 32) {
      std::vector<Tensor<float>*> params;
      std::vector<const Tensor<float>*> dirs;
      for (std::size_t l = 0; l < enc.num_layers(); ++l) {
        params.push_back(&enc.params(l).weight);
        params.push_back(&enc.params(l).bias);
        dirs.push_back(&buf.layers[l].weight);
        dirs.push_back(&buf.layers[l].bias);
      }
      for (std::size_t h = 0; h < heads.size(); ++h) {
        params.push_back(&heads[h].w_pred);
        params.push_back(&heads[h].w_retro);
        dirs.push_back(&buf.heads[h].pred);
        dirs.push_back(&buf.heads[h].retro);
      }
      opt.apply(params, dirs, 1.0f / static_cast<float>(buf.events));
      buf.clear();
    }
    if (t % 500 == 0) {
      std::cout << "  events " << t << ": mean hinge loss " << loss / counted << "\n";
      loss = 0;
      counted = 0;
    }
  }
}

}  // namespace

int main() {
  std::cout << "Part 1: step-level API\n";
  hand_rolled_loop();

  std::cout << "Part 2: train and probe\n";
  RunConfig cfg;
  cfg.output_dir = "clapp_demo_run";
  cfg.training.epochs = 10;
  const TrainResult r = cmd_train(cfg, &std::cout);

  const Checkpoint untrained = load_checkpoint(fs::path(cfg.output_dir) / "checkpoints" / "epoch_000");
  const Checkpoint trained = load_checkpoint(r.checkpoint);
  std::cout << "untrained encoder\n" << probe_csv(probe_checkpoint(untrained, cfg, {}));
  std::cout << "trained encoder\n" << probe_csv(probe_checkpoint(trained, cfg, {}));
  return 0;
}
