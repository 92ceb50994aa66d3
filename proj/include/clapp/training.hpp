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

// Streaming trainer: feeds a fixation/saccade stream through the encoder,
// buffers the per-step local updates and applies their average every batch.

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "clapp/config.hpp"
#include "clapp/io.hpp"
#include "clapp/optimizer.hpp"
#include "clapp/plasticity.hpp"
#include "clapp/recurrent.hpp"
#include "clapp/stream.hpp"

namespace clapp {

/// Independent stream of seeds derived from the run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (purpose + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum SeedPurpose : std::uint64_t {
  kSeedEncoder = 1,
  kSeedHeads = 2,
  kSeedStream = 3,
  kSeedNegatives = 4,
  kSeedRecurrent = 5,
  kSeedProbe = 6,
};

/// Loads or generates the dataset of one source, applying the configured
/// preprocessing.
inline Dataset load_source(const DataSource& src, const DataConfig& data) {
  Dataset ds;
  if (src.synthetic) {
    ds = synthetic_sequence_dataset(*src.synthetic);
  } else if (!src.index.empty()) {
    ds = load_dataset(src.index);
  } else {
    throw InputError("no data source configured");
  }
  if (data.grayscale) {
    for (auto& s : ds) s.tensor = grayscale_normalize(s.tensor);
  }
  return ds;
}

/// Shape of one stream step of the first sample of `corpus`.
inline Shape step_shape(const SequenceCorpus& corpus) {
  return corpus.sequences(0).front().front().shape();
}

inline Encoder<float> build_encoder(const EncoderConfig& cfg, const Shape& step) {
  std::vector<LayerSpec> specs;
  if (cfg.preset == "dense") {
    specs = dense_preset(shape_size(step), cfg.widths);
    for (auto& s : specs) s.activation = cfg.activation;
    return Encoder<float>(specs, {shape_size(step)});
  }
  if (step.size() != 3) {
    throw InputError("the vgg6 preset needs C x H x W steps (configure data.patch)");
  }
  specs = vgg6_preset(step[0], cfg.width_divisor, cfg.depth);
  return Encoder<float>(specs, step);
}

/// One row of the metrics stream.
struct MetricsRow {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::string mode;
  double loss = 0;
  double margin_violation_rate = 0;
  double update_norm = 0;
};

inline const char* metrics_header() {
  return "step,layer,mode,loss,margin_violation_rate,update_norm";
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.step << ',' << r.layer << ',' << r.mode << ',' << r.loss << ','
     << r.margin_violation_rate << ',' << r.update_norm << '\n';
}

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t events = 0;
  std::size_t skipped = 0;              // head-steps without enough history or a positive
  std::vector<double> layer_loss;       // per layer (plus the recurrent layer, if any)
  std::vector<double> violation_rate;
  double mean_loss = 0;                 // over all contributing head-steps
};

class Trainer {
 public:
  Trainer(Encoder<float> encoder, const SequenceCorpus& corpus, HyperParams hp,
          TrainingConfig tc, std::uint64_t seed)
      : enc_(std::move(encoder)),
        corpus_(&corpus),
        hp_(std::move(hp)),
        tc_(tc),
        seed_(seed),
        trace_(hp_.max_offset() + 1),
        stream_(corpus, tc.p_switch, derive_seed(seed, kSeedStream)),
        neg_rng_(derive_seed(seed, kSeedNegatives)) {
    hp_.optimizer_scales = tc_.optimizer == OptimizerKind::adam;
    hp_.validate();
    if (tc_.batch_size == 0) throw InputError("batch size must be positive");
    enc_.init(derive_seed(seed, kSeedEncoder));
    heads_ = make_heads(enc_, hp_, derive_seed(seed, kSeedHeads), tc_.tied_init);
    buf_ = UpdateBuffer<float>(enc_, heads_);
    if (tc_.gru_hidden > 0) {
      if (hp_.mode != Mode::clapp) throw InputError("recurrent layer needs clapp mode");
      std::mt19937_64 rng(derive_seed(seed, kSeedRecurrent));
      const std::size_t top = enc_.vec_dim(enc_.num_layers() - 1);
      gru_ = GruParams<float>::random(top, tc_.gru_hidden, rng);
      gru_head_ = PredictorHead<float>::make(top, tc_.gru_hidden, enc_.num_layers() - 1,
                                             enc_.num_layers(), hp_.offsets.front(), rng,
                                             tc_.tied_init);
      if (hp_.retro == RetroMode::zero) gru_head_->w_retro.fill(0.0f);
      gru_buf_ = GruParams<float>::zeros(top, tc_.gru_hidden);
      gru_head_buf_ = HeadUpdate<float>::zeros_like(*gru_head_);
      h_ = Tensor<float>({tc_.gru_hidden});
      traces_ = EligibilityTraces<float>(top, tc_.gru_hidden);
    }
    optimizer_ = Optimizer<float>(tc_.optimizer, hp_.eta);
    const std::size_t tracked = num_tracked_layers();
    batch_loss_.assign(tracked, 0.0);
    batch_active_.assign(tracked, 0);
    batch_count_.assign(tracked, 0);
  }

  std::size_t steps_per_epoch() const {
    return tc_.steps_per_epoch > 0 ? tc_.steps_per_epoch : corpus_->total_steps();
  }

  /// Runs one epoch. Metrics rows (one per layer per applied batch) go to
  /// `metrics` when given.
  EpochSummary run_epoch(std::ostream* metrics = nullptr) {
    const std::size_t tracked = num_tracked_layers();
    std::vector<double> loss(tracked, 0.0);
    std::vector<std::size_t> active(tracked, 0), count(tracked, 0);
    EpochSummary s;
    s.epoch = ++epoch_;
    const std::size_t n = steps_per_epoch();
    for (std::size_t i = 0; i < n; ++i) {
      const StepRecord r = process(stream_.next());
      for (std::size_t l = 0; l < tracked; ++l) {
        loss[l] += r.loss[l];
        active[l] += r.active[l];
        count[l] += r.count[l];
        batch_loss_[l] += r.loss[l];
        batch_active_[l] += r.active[l];
        batch_count_[l] += r.count[l];
      }
      s.skipped += r.skipped;
      if (++batch_events_ == tc_.batch_size) apply_batch(metrics);
    }
    s.events = n;
    double total = 0;
    std::size_t total_count = 0;
    for (std::size_t l = 0; l < tracked; ++l) {
      s.layer_loss.push_back(count[l] ? loss[l] / static_cast<double>(count[l]) : 0.0);
      s.violation_rate.push_back(count[l] ? static_cast<double>(active[l]) /
                                                static_cast<double>(count[l])
                                          : 0.0);
      total += loss[l];
      total_count += count[l];
    }
    s.mean_loss = total_count ? total / static_cast<double>(total_count) : 0.0;
    return s;
  }

  /// Applies whatever is buffered (end of training).
  void flush(std::ostream* metrics = nullptr) {
    if (batch_events_ > 0) apply_batch(metrics);
  }

  Checkpoint checkpoint(const nlohmann::json& config = nlohmann::json::object()) const {
    Checkpoint ck;
    ck.encoder = enc_;
    ck.heads = heads_;
    if (gru_head_) ck.heads.push_back(*gru_head_);
    ck.gru = gru_;
    ck.seed = seed_;
    ck.step = step_;
    ck.epoch = epoch_;
    ck.config = config;
    return ck;
  }

  const Encoder<float>& encoder() const noexcept { return enc_; }
  const std::vector<PredictorHead<float>>& heads() const noexcept { return heads_; }
  const std::optional<GruParams<float>>& recurrent() const noexcept { return gru_; }
  std::size_t step() const noexcept { return step_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  struct StepRecord {
    std::vector<double> loss;
    std::vector<std::size_t> active, count;
    std::size_t skipped = 0;
  };

  std::size_t num_tracked_layers() const { return enc_.num_layers() + (gru_ ? 1 : 0); }

  StepRecord process(const StreamEvent& ev) {
    const std::size_t tracked = num_tracked_layers();
    StepRecord rec{std::vector<double>(tracked, 0.0), std::vector<std::size_t>(tracked, 0),
                   std::vector<std::size_t>(tracked, 0), 0};
    std::vector<HeadStep<float>> res;
    const Tensor<float> x = ev.x.reshaped(enc_.input_shape());
    if (hp_.mode == Mode::clapp) {
      res = clapp_step(x, ev.y, ev.source_id, enc_, trace_, heads_, hp_, buf_);
    } else {
      std::vector<Tensor<float>> negatives;
      negatives.reserve(hp_.n_negatives);
      for (std::size_t k = 0; k < hp_.n_negatives; ++k) {
        negatives.push_back(corpus_->random_step(neg_rng_, stream_.current_sample())
                                .reshaped(enc_.input_shape()));
      }
      res = synchronous_step(x, ev.y, ev.source_id, negatives, enc_, trace_, heads_, hp_, buf_);
    }
    for (std::size_t i = 0; i < res.size(); ++i) {
      if (res[i].skipped) {
        ++rec.skipped;
        continue;
      }
      const std::size_t l = heads_[i].z_layer;
      rec.loss[l] += static_cast<double>(res[i].loss);
      rec.active[l] += res[i].active ? 1 : 0;
      rec.count[l] += 1;
    }
    if (gru_) recurrent_step(rec);
    ++step_;
    return rec;
  }

  /// Recurrent top layer: the GRU output recorded delta_t steps ago is the
  /// context predicting the current top encoder layer. The GRU's update is the
  /// retrodiction signal times the eligibility traces held at that time.
  void recurrent_step(StepRecord& rec) {
    const std::size_t top = enc_.num_layers() - 1;
    const EncoderState<float>& now = trace_.at(0).state;
    const Tensor<float>& z = now.vec(top);
    const GruStep<float> s = gru_forward_blocked(*gru_, z, h_);
    traces_.advance(s);
    h_ = s.h;
    const std::size_t delta = gru_head_->delta_t;
    h_hist_.push_front(h_);
    trace_hist_.push_front(traces_);
    while (h_hist_.size() > delta + 1) {
      h_hist_.pop_back();
      trace_hist_.pop_back();
    }
    const std::size_t slot = enc_.num_layers();
    if (h_hist_.size() <= delta || trace_.size() <= delta) {
      ++rec.skipped;
      return;
    }
    const Tensor<float>& c = h_hist_[delta];
    const int label = trace_.fixation_label(delta);
    Tensor<float> scratch;
    const Tensor<float>& retro = retro_matrix(*gru_head_, hp_.retro, scratch);
    const float hval = static_cast<float>(hp_.h_value());
    const float u_z = score(z, c, gru_head_->w_pred);
    const float u_c = dot(z, matvec_transposed(retro, c));
    const Modulator<float> mz = modulator(u_z, label, hval);
    const Modulator<float> mc = modulator(u_c, label, hval);
    buf_.layers[top] += update_predicted_layer(enc_.spec(top), now.layers[top], c,
                                               gru_head_->w_pred, mz);
    if (hp_.retro != RetroMode::zero && mc.gamma != 0.0f) {
      Tensor<float> signal = matvec(retro, z);
      signal *= mc.gamma;
      trace_hist_[delta].accumulate(signal, gru_buf_);
    }
    HeadUpdate<float> hu = update_predictor(z, c, mz);
    if (hp_.retro == RetroMode::learned) {
      if (mc.gamma != mz.gamma) hu.retro = update_predictor(z, c, mc).retro;
    } else {
      hu.retro.fill(0.0f);
    }
    gru_head_buf_ += hu;
    rec.loss[slot] += static_cast<double>(clapp_loss(u_z, label));
    rec.active[slot] += mz.h != 0.0f ? 1 : 0;
    rec.count[slot] += 1;
    ++gru_events_;
  }

  void apply_batch(std::ostream* metrics) {
    const std::size_t n = std::max(buf_.events, gru_events_);
    const std::size_t tracked = num_tracked_layers();
    std::vector<double> norms(tracked, 0.0);
    if (n > 0) {
      const float scale = 1.0f / static_cast<float>(n);
      std::vector<Tensor<float>*> params;
      std::vector<const Tensor<float>*> dirs;
      for (std::size_t l = 0; l < enc_.num_layers(); ++l) {
        params.push_back(&enc_.params(l).weight);
        dirs.push_back(&buf_.layers[l].weight);
        params.push_back(&enc_.params(l).bias);
        dirs.push_back(&buf_.layers[l].bias);
        norms[l] = std::sqrt(static_cast<double>(buf_.layers[l].squared_norm())) * scale;
      }
      for (std::size_t i = 0; i < heads_.size(); ++i) {
        params.push_back(&heads_[i].w_pred);
        dirs.push_back(&buf_.heads[i].pred);
        params.push_back(&heads_[i].w_retro);
        dirs.push_back(&buf_.heads[i].retro);
      }
      if (gru_) {
        double sq = 0;
        for (std::size_t k = 0; k < GruParams<float>::kCount; ++k) {
          params.push_back(&gru_->t[k]);
          dirs.push_back(&gru_buf_.t[k]);
          const double nk = l2_norm(gru_buf_.t[k]);
          sq += nk * nk;
        }
        norms[enc_.num_layers()] = std::sqrt(sq) * scale;
        params.push_back(&gru_head_->w_pred);
        dirs.push_back(&gru_head_buf_.pred);
        params.push_back(&gru_head_->w_retro);
        dirs.push_back(&gru_head_buf_.retro);
      }
      optimizer_.apply(params, dirs, scale);
    }
    if (metrics) {
      for (std::size_t l = 0; l < tracked; ++l) {
        MetricsRow row;
        row.step = step_;
        row.layer = l;
        row.mode = to_string(hp_.mode);
        row.loss = batch_count_[l] ? batch_loss_[l] / static_cast<double>(batch_count_[l]) : 0.0;
        row.margin_violation_rate = batch_count_[l] ? static_cast<double>(batch_active_[l]) /
                                                          static_cast<double>(batch_count_[l])
                                                    : 0.0;
        row.update_norm = norms[l];
        write_metrics_row(*metrics, row);
      }
    }
    buf_.clear();
    if (gru_) {
      gru_buf_.fill(0.0f);
      gru_head_buf_.pred.fill(0.0f);
      gru_head_buf_.retro.fill(0.0f);
    }
    gru_events_ = 0;
    batch_events_ = 0;
    std::fill(batch_loss_.begin(), batch_loss_.end(), 0.0);
    std::fill(batch_active_.begin(), batch_active_.end(), 0);
    std::fill(batch_count_.begin(), batch_count_.end(), 0);
  }

  Encoder<float> enc_;
  const SequenceCorpus* corpus_;
  HyperParams hp_;
  TrainingConfig tc_;
  std::uint64_t seed_;
  TraceBuffer<float> trace_;
  FixationSaccadeStream stream_;
  std::mt19937_64 neg_rng_;
  std::vector<PredictorHead<float>> heads_;
  UpdateBuffer<float> buf_;
  Optimizer<float> optimizer_;

  std::optional<GruParams<float>> gru_;
  std::optional<PredictorHead<float>> gru_head_;
  GruParams<float> gru_buf_;
  HeadUpdate<float> gru_head_buf_;
  Tensor<float> h_;
  EligibilityTraces<float> traces_;
  std::deque<Tensor<float>> h_hist_;
  std::deque<EligibilityTraces<float>> trace_hist_;
  std::size_t gru_events_ = 0;

  std::size_t batch_events_ = 0;
  std::vector<double> batch_loss_;
  std::vector<std::size_t> batch_active_, batch_count_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace clapp
