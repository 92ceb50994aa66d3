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

// Layer-local contrastive predictive plasticity.
//
// Each layer l owns a predictor head scoring u = z^T W_pred c, where z is the
// layer's pooled activity at time t and c the context activity (same layer or
// the layer above) recorded delta_t steps earlier. The hinge loss
// max(0, 1 - y u), with y = +1 across a fixation and -1 across a saccade,
// gates three local updates through the broadcast factor gamma = y H:
//
//   predicted layer:  dW_ji   = gamma (W_pred c)_j   rho'(a_j)   x_i
//   context layer:    dW_kl   = gamma (W_retro z)_k  rho'(a^c_k) x^c_l
//   predictor:        dWp_jk  = dWr_kj = gamma z_j c_k
//
// No gradient ever crosses a layer boundary: each layer's inputs are treated
// as constants.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "clapp/encoder.hpp"

namespace clapp {

enum class Mode { clapp, clapp_s, hinge_cpc, cpc_gim };
enum class ContextSource { same_layer, layer_above };
/// How the context-layer update obtains its dendritic signal: a learned
/// retrodiction matrix, the transpose of W_pred (weight transport), or zero.
enum class RetroMode { learned, transpose, zero };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::clapp: return "clapp";
    case Mode::clapp_s: return "clapp_s";
    case Mode::hinge_cpc: return "hinge_cpc";
    case Mode::cpc_gim: return "cpc_gim";
  }
  return "?";
}

inline bool is_synchronous(Mode m) { return m != Mode::clapp; }

struct HyperParams {
  double eta = 2e-4;
  std::vector<std::size_t> offsets{1};  // delta_t values, one head per offset
  std::size_t n_negatives = 16;
  Mode mode = Mode::clapp;
  ContextSource context = ContextSource::same_layer;
  RetroMode retro = RetroMode::learned;
  /// With an adaptive optimizer the learning rate lives there and H is 0/1.
  bool optimizer_scales = true;
  /// Layers per gradient-isolated module (reference modes only).
  std::vector<std::size_t> module_sizes;

  double h_value() const { return optimizer_scales ? 1.0 : eta; }
  std::size_t max_offset() const {
    return offsets.empty() ? 1 : *std::max_element(offsets.begin(), offsets.end());
  }

  void validate() const {
    if (!(eta > 0)) throw InputError("eta must be positive");
    if (offsets.empty()) throw InputError("at least one delta_t offset required");
    for (auto d : offsets)
      if (d < 1) throw InputError("delta_t must be >= 1");
    if (is_synchronous(mode) && n_negatives < 1) {
      throw InputError("synchronous modes need n_negatives >= 1");
    }
    if (mode == Mode::clapp || mode == Mode::clapp_s) {
      for (auto m : module_sizes)
        if (m != 1) throw InputError("local modes require one layer per module");
    }
  }
};

template <typename T>
struct PredictorHead {
  Tensor<T> w_pred;   // dim_z x dim_c
  Tensor<T> w_retro;  // dim_c x dim_z
  std::size_t z_layer = 0;
  std::size_t c_layer = 0;
  std::size_t delta_t = 1;

  std::size_t dim_z() const { return w_pred.dim(0); }
  std::size_t dim_c() const { return w_pred.dim(1); }

  /// Uniform init scaled by 1/sqrt(dim_c); W_retro is drawn independently
  /// unless `tied`, in which case it starts as W_pred^T.
  static PredictorHead make(std::size_t dim_z, std::size_t dim_c, std::size_t z_layer,
                            std::size_t c_layer, std::size_t delta_t,
                            std::mt19937_64& rng, bool tied) {
    PredictorHead h;
    h.w_pred = uniform_init<T>({dim_z, dim_c}, dim_c, rng);
    h.w_retro = tied ? transpose(h.w_pred) : uniform_init<T>({dim_c, dim_z}, dim_z, rng);
    h.z_layer = z_layer;
    h.c_layer = c_layer;
    h.delta_t = delta_t;
    return h;
  }
};

template <typename T>
struct Modulator {
  int y = 1;
  T h{0};
  T gamma{0};
};

// ---------------------------------------------------------------------------
// Scores, loss, modulator

template <typename T>
T score(const Tensor<T>& z, const Tensor<T>& c, const Tensor<T>& w_pred) {
  if (w_pred.rank() != 2 || z.size() != w_pred.dim(0) || c.size() != w_pred.dim(1)) {
    throw DimensionError("score: z " + shape_str(z.shape()) + ", W_pred " +
                         shape_str(w_pred.shape()) + ", c " + shape_str(c.shape()));
  }
  return dot(z, matvec(w_pred, c));
}

template <typename T>
T score(const Tensor<T>& z, const Tensor<T>& c, const PredictorHead<T>& head) {
  return score(z, c, head.w_pred);
}

template <typename T>
T clapp_loss(T u, int y) {
  if (y != 1 && y != -1) throw InputError("label y must be +1 or -1");
  return std::max(T{0}, T{1} - static_cast<T>(y) * u);
}

/// H = eta while the hinge is active (y u < 1, strict), else 0.
template <typename T>
Modulator<T> modulator(T u, int y, T eta) {
  if (!(eta > T{0})) throw InputError("eta must be positive");
  if (y != 1 && y != -1) throw InputError("label y must be +1 or -1");
  Modulator<T> m;
  m.y = y;
  m.h = static_cast<T>(y) * u < T{1} ? eta : T{0};
  m.gamma = static_cast<T>(y) * m.h;
  return m;
}

/// Scores of the two halves of the weight-transport-free loss: u_z sees W_pred
/// with the context held fixed, u_c sees W_retro with z held fixed.
template <typename T>
std::pair<T, T> split_score_pair(const Tensor<T>& z, const Tensor<T>& c,
                                 const PredictorHead<T>& head) {
  const T u_z = score(z, c, head.w_pred);
  if (head.w_retro.rank() != 2 || head.w_retro.dim(0) != c.size() ||
      head.w_retro.dim(1) != z.size()) {
    throw DimensionError("split_score_pair: W_retro " + shape_str(head.w_retro.shape()));
  }
  const T u_c = dot(z, matvec_transposed(head.w_retro, c));
  return {u_z, u_c};
}

// ---------------------------------------------------------------------------
// Local updates

template <typename T>
struct HeadUpdate {
  Tensor<T> pred;
  Tensor<T> retro;

  static HeadUpdate zeros_like(const PredictorHead<T>& h) {
    return {Tensor<T>(h.w_pred.shape()), Tensor<T>(h.w_retro.shape())};
  }
  HeadUpdate& operator+=(const HeadUpdate& o) {
    pred += o.pred;
    retro += o.retro;
    return *this;
  }
};

/// Update of the predicted layer's feedforward weights.
template <typename T>
LayerGrads<T> update_predicted_layer(const LayerSpec& spec, const LayerCache<T>& now,
                                     const Tensor<T>& c_past, const Tensor<T>& w_pred,
                                     const Modulator<T>& mod) {
  if (mod.gamma == T{0}) {
    return {Tensor<T>(spec.weight_shape()), Tensor<T>({spec.out})};
  }
  Tensor<T> dendrite = matvec(w_pred, c_past);
  dendrite *= mod.gamma;
  return layer_adjoint(spec, now, vector_grad_to_output(now, dendrite));
}

/// Update of the context layer's feedforward weights, driven by the
/// retrodiction `dendrite_matrix * z` (W_retro, or W_pred^T for the exact
/// gradient).
template <typename T>
LayerGrads<T> update_context_layer(const LayerSpec& spec, const LayerCache<T>& past,
                                   const Tensor<T>& z_now,
                                   const Tensor<T>& dendrite_matrix,
                                   const Modulator<T>& mod) {
  if (mod.gamma == T{0}) {
    return {Tensor<T>(spec.weight_shape()), Tensor<T>({spec.out})};
  }
  Tensor<T> dendrite = matvec(dendrite_matrix, z_now);
  dendrite *= mod.gamma;
  return layer_adjoint(spec, past, vector_grad_to_output(past, dendrite));
}

/// Reciprocal Hebbian update of the prediction and retrodiction weights.
template <typename T>
HeadUpdate<T> update_predictor(const Tensor<T>& z_now, const Tensor<T>& c_past,
                               const Modulator<T>& mod) {
  HeadUpdate<T> u{Tensor<T>({z_now.size(), c_past.size()}),
                  Tensor<T>({c_past.size(), z_now.size()})};
  if (mod.gamma == T{0}) return u;
  for (std::size_t j = 0; j < z_now.size(); ++j) {
    const T gz = mod.gamma * z_now[j];
    for (std::size_t k = 0; k < c_past.size(); ++k) {
      const T v = gz * c_past[k];
      u.pred(j, k) = v;
      u.retro(k, j) = v;
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Update accumulation

/// Summed updates of one batch; `events` counts the contributing steps.
template <typename T>
struct UpdateBuffer {
  std::vector<LayerGrads<T>> layers;
  std::vector<HeadUpdate<T>> heads;
  std::size_t events = 0;

  UpdateBuffer() = default;
  UpdateBuffer(const Encoder<T>& enc, const std::vector<PredictorHead<T>>& hs) {
    for (const auto& p : enc.all_params()) layers.push_back(LayerGrads<T>::zeros_like(p));
    for (const auto& h : hs) heads.push_back(HeadUpdate<T>::zeros_like(h));
  }

  void clear() {
    for (auto& l : layers) {
      l.weight.fill(T{0});
      l.bias.fill(T{0});
    }
    for (auto& h : heads) {
      h.pred.fill(T{0});
      h.retro.fill(T{0});
    }
    events = 0;
  }

  bool all_zero() const {
    for (const auto& l : layers)
      if (max_abs(l.weight) != T{0} || max_abs(l.bias) != T{0}) return false;
    for (const auto& h : heads)
      if (max_abs(h.pred) != T{0} || max_abs(h.retro) != T{0}) return false;
    return true;
  }
};

/// Builds one head per (layer or module, offset). With layer_above context the
/// top layer predicts from itself.
template <typename T>
std::vector<PredictorHead<T>> make_heads(const Encoder<T>& enc, const HyperParams& hp,
                                         std::uint64_t seed, bool tied) {
  std::mt19937_64 rng(seed);
  std::vector<PredictorHead<T>> heads;
  std::vector<std::size_t> tops;
  if (hp.module_sizes.empty()) {
    for (std::size_t l = 0; l < enc.num_layers(); ++l) tops.push_back(l);
  } else {
    std::size_t acc = 0;
    for (auto m : hp.module_sizes) {
      acc += m;
      tops.push_back(acc - 1);
    }
    if (acc != enc.num_layers()) {
      throw InputError("module sizes must add up to the number of layers");
    }
  }
  for (std::size_t i = 0; i < tops.size(); ++i) {
    const std::size_t zl = tops[i];
    std::size_t cl = zl;
    if (hp.context == ContextSource::layer_above && i + 1 < tops.size()) cl = tops[i + 1];
    for (auto d : hp.offsets) {
      auto h = PredictorHead<T>::make(enc.vec_dim(zl), enc.vec_dim(cl), zl, cl, d, rng, tied);
      if (hp.retro == RetroMode::zero) h.w_retro.fill(T{0});
      heads.push_back(std::move(h));
    }
  }
  return heads;
}

/// First layer of the module whose top layer is `top`.
inline std::size_t module_first_layer(const HyperParams& hp, std::size_t top) {
  if (hp.module_sizes.empty()) return top;
  std::size_t acc = 0;
  for (auto m : hp.module_sizes) {
    if (acc + m - 1 == top) return acc;
    acc += m;
  }
  throw InputError("layer " + std::to_string(top) + " is not a module top");
}

/// Accumulates into `grads` the parameter gradients of <up_vec, vec(top)>
/// back-propagated through layers first..top of one recorded state.
template <typename T>
void backprop_module(const Encoder<T>& enc, const EncoderState<T>& st, std::size_t first,
                     std::size_t top, const Tensor<T>& up_vec,
                     std::vector<LayerGrads<T>>& grads) {
  Tensor<T> up = vector_grad_to_output(st.layers[top], up_vec);
  for (std::size_t l = top + 1; l-- > first;) {
    grads[l] += layer_adjoint(enc.spec(l), st.layers[l], up);
    if (l > first) {
      up = input_adjoint(enc.spec(l), enc.params(l), st.layers[l], up)
               .reshaped(st.layers[l - 1].output.shape());
    }
  }
}

/// Per-head outcome of one step.
template <typename T>
struct HeadStep {
  bool skipped = true;
  T loss{0};
  T u{0};
  T u_retro{0};
  int y = 1;
  bool active = false;
  bool active_retro = false;
};

template <typename T>
const Tensor<T>& retro_matrix(const PredictorHead<T>& head, RetroMode mode,
                              Tensor<T>& scratch) {
  if (mode == RetroMode::transpose) {
    scratch = transpose(head.w_pred);
    return scratch;
  }
  return head.w_retro;
}

/// One time-local step: runs the encoder on the event, records it, and for
/// every head whose offset is covered by the trace adds the three local
/// updates to `buf`. Heads without enough history are skipped.
template <typename T>
std::vector<HeadStep<T>> clapp_step(const Tensor<T>& x, int y, std::int64_t source_id,
                                    const Encoder<T>& enc, TraceBuffer<T>& trace,
                                    const std::vector<PredictorHead<T>>& heads,
                                    const HyperParams& hp, UpdateBuffer<T>& buf) {
  forward_and_record(enc, x, trace, y, source_id);
  const EncoderState<T>& now = trace.at(0).state;
  const T h_value = static_cast<T>(hp.h_value());
  std::vector<HeadStep<T>> out(heads.size());
  bool any = false;
  Tensor<T> scratch;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& head = heads[i];
    if (trace.size() <= head.delta_t) continue;
    const TraceEntry<T>& past = trace.at(head.delta_t);
    const int label = trace.fixation_label(head.delta_t);
    const Tensor<T>& z = now.vec(head.z_layer);
    const Tensor<T>& c = past.state.vec(head.c_layer);
    const Tensor<T>& retro = retro_matrix(head, hp.retro, scratch);

    const T u_z = score(z, c, head.w_pred);
    const T u_c = dot(z, matvec_transposed(retro, c));
    const Modulator<T> mod_z = modulator(u_z, label, h_value);
    const Modulator<T> mod_c = modulator(u_c, label, h_value);

    buf.layers[head.z_layer] += update_predicted_layer(
        enc.spec(head.z_layer), now.layers[head.z_layer], c, head.w_pred, mod_z);
    if (hp.retro != RetroMode::zero) {
      buf.layers[head.c_layer] += update_context_layer(
          enc.spec(head.c_layer), past.state.layers[head.c_layer], z, retro, mod_c);
    }
    HeadUpdate<T> hu = update_predictor(z, c, mod_z);
    if (hp.retro == RetroMode::learned) {
      // The retrodiction half follows its own gate.
      if (mod_c.gamma != mod_z.gamma) hu.retro = update_predictor(z, c, mod_c).retro;
    } else {
      hu.retro.fill(T{0});
    }
    buf.heads[i] += hu;

    auto& r = out[i];
    r.skipped = false;
    r.u = u_z;
    r.u_retro = u_c;
    r.y = label;
    r.loss = clapp_loss(u_z, label);
    r.active = mod_z.h != T{0};
    r.active_retro = mod_c.h != T{0};
    any = true;
  }
  if (any) ++buf.events;
  return out;
}

/// Synchronous step: the recorded current event is the positive for the
/// context recorded delta_t steps earlier, and `negatives` are inputs from
/// other samples. Each head averages the hinge terms of the positive and all
/// negatives; updates are the same average of the per-term local updates.
/// Steps whose pair straddles a saccade have no positive and are skipped.
///
/// In reference modes (hinge_cpc, cpc_gim) the context update uses W_pred^T
/// and gradients flow through every layer of a head's module; cpc_gim uses the
/// softmax cross-entropy instead of the hinge.
template <typename T>
std::vector<HeadStep<T>> synchronous_step(const Tensor<T>& x, int y,
                                          std::int64_t source_id,
                                          const std::vector<Tensor<T>>& negatives,
                                          const Encoder<T>& enc, TraceBuffer<T>& trace,
                                          const std::vector<PredictorHead<T>>& heads,
                                          const HyperParams& hp, UpdateBuffer<T>& buf);

template <typename T>
std::vector<HeadStep<T>> clapp_s_step(const Tensor<T>& x, int y, std::int64_t source_id,
                                      const std::vector<Tensor<T>>& negatives,
                                      const Encoder<T>& enc, TraceBuffer<T>& trace,
                                      const std::vector<PredictorHead<T>>& heads,
                                      const HyperParams& hp, UpdateBuffer<T>& buf) {
  if (negatives.empty()) throw InputError("clapp_s needs at least one negative");
  return synchronous_step(x, y, source_id, negatives, enc, trace, heads, hp, buf);
}

// ---------------------------------------------------------------------------
// Softmax (CPC) reference

/// Score-level pieces of the softmax contrastive loss over one positive and
/// N negatives. All gradients are of log pi_positive, i.e. ascent directions.
template <typename T>
struct CpcScoreGrads {
  std::vector<T> scores;        // positive first
  std::vector<T> probabilities; // softmax of scores
  T loss{0};                    // -log pi_positive
  Tensor<T> pred;               // d log pi / d W_pred
  std::vector<T> z_coeff;       // d log pi / d u_tau = [tau == +] - pi_tau
  Tensor<T> c_grad;             // d log pi / d c = W_pred^T (z+ - sum pi z)
};

template <typename T>
CpcScoreGrads<T> cpc_score_grads(const Tensor<T>& c, const Tensor<T>& z_pos,
                                 const std::vector<Tensor<T>>& z_negs,
                                 const Tensor<T>& w_pred) {
  if (z_negs.empty()) throw InputError("CPC reference needs at least one negative");
  CpcScoreGrads<T> g;
  const Tensor<T> pred_c = matvec(w_pred, c);
  std::vector<const Tensor<T>*> zs{&z_pos};
  for (const auto& z : z_negs) zs.push_back(&z);
  for (const auto* z : zs) {
    if (z->size() != w_pred.dim(0)) throw DimensionError("CPC sample dimension");
    g.scores.push_back(dot(*z, pred_c));
  }
  const T m = *std::max_element(g.scores.begin(), g.scores.end());
  T zsum{0};
  for (T s : g.scores) zsum += std::exp(s - m);
  for (T s : g.scores) g.probabilities.push_back(std::exp(s - m) / zsum);
  g.loss = -(g.scores[0] - m - std::log(zsum));

  Tensor<T> mix = z_pos;  // z+ - sum_tau pi_tau z_tau
  for (std::size_t i = 0; i < zs.size(); ++i) mix.axpy(-g.probabilities[i], *zs[i]);
  g.pred = outer(mix, c);
  g.c_grad = matvec_transposed(w_pred, mix);
  for (std::size_t i = 0; i < zs.size(); ++i)
    g.z_coeff.push_back((i == 0 ? T{1} : T{0}) - g.probabilities[i]);
  return g;
}

/// Layer-wise gradients of log pi_positive for one trainable layer producing
/// z and one producing c (possibly the same layer, in which case the caller
/// sums w_z and w_c).
template <typename T>
struct CpcReferenceGrads {
  Tensor<T> pred;
  LayerGrads<T> w_z;
  LayerGrads<T> w_c;
  std::vector<T> probabilities;
  T loss{0};
};

template <typename T>
CpcReferenceGrads<T> cpc_reference_grads(const LayerSpec& c_spec, const LayerCache<T>& c_cache,
                                         const LayerSpec& z_spec,
                                         const LayerCache<T>& z_pos,
                                         const std::vector<LayerCache<T>>& z_negs,
                                         const Tensor<T>& w_pred) {
  std::vector<Tensor<T>> neg_vecs;
  for (const auto& n : z_negs) neg_vecs.push_back(n.vec);
  CpcScoreGrads<T> s = cpc_score_grads(c_cache.vec, z_pos.vec, neg_vecs, w_pred);
  const Tensor<T> pred_c = matvec(w_pred, c_cache.vec);

  CpcReferenceGrads<T> g;
  g.pred = std::move(s.pred);
  g.probabilities = s.probabilities;
  g.loss = s.loss;
  g.w_z = layer_adjoint(z_spec, z_pos, vector_grad_to_output(z_pos, pred_c * s.z_coeff[0]));
  for (std::size_t n = 0; n < z_negs.size(); ++n) {
    g.w_z += layer_adjoint(z_spec, z_negs[n],
                           vector_grad_to_output(z_negs[n], pred_c * s.z_coeff[n + 1]));
  }
  g.w_c = layer_adjoint(c_spec, c_cache, vector_grad_to_output(c_cache, s.c_grad));
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<HeadStep<T>> synchronous_step(const Tensor<T>& x, int y,
                                          std::int64_t source_id,
                                          const std::vector<Tensor<T>>& negatives,
                                          const Encoder<T>& enc, TraceBuffer<T>& trace,
                                          const std::vector<PredictorHead<T>>& heads,
                                          const HyperParams& hp, UpdateBuffer<T>& buf) {
  if (negatives.empty()) throw InputError("synchronous step needs negatives");
  forward_and_record(enc, x, trace, y, source_id);
  const EncoderState<T>& now = trace.at(0).state;
  std::vector<EncoderState<T>> neg_states;
  neg_states.reserve(negatives.size());
  for (const auto& n : negatives) neg_states.push_back(enc.forward(n));

  const bool reference = hp.mode == Mode::hinge_cpc || hp.mode == Mode::cpc_gim;
  const RetroMode retro_mode = reference ? RetroMode::transpose : hp.retro;
  const T h_value = static_cast<T>(hp.h_value());
  const T inv_terms = T{1} / static_cast<T>(negatives.size() + 1);

  std::vector<HeadStep<T>> out(heads.size());
  bool any = false;
  Tensor<T> scratch;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& head = heads[i];
    if (trace.size() <= head.delta_t) continue;
    if (trace.fixation_label(head.delta_t) < 0) continue;
    const TraceEntry<T>& past = trace.at(head.delta_t);
    const Tensor<T>& c = past.state.vec(head.c_layer);
    const std::size_t z_first = reference ? module_first_layer(hp, head.z_layer) : head.z_layer;
    const std::size_t c_first = reference ? module_first_layer(hp, head.c_layer) : head.c_layer;
    auto& r = out[i];
    r.skipped = false;
    r.y = 1;

    if (hp.mode == Mode::cpc_gim) {
      std::vector<Tensor<T>> zn;
      for (const auto& st : neg_states) zn.push_back(st.vec(head.z_layer));
      const CpcScoreGrads<T> g = cpc_score_grads(c, now.vec(head.z_layer), zn, head.w_pred);
      const Tensor<T> pred_c = matvec(head.w_pred, c);
      // Descent on -log pi is ascent on log pi, scaled by H.
      backprop_module(enc, now, z_first, head.z_layer, pred_c * (h_value * g.z_coeff[0]),
                      buf.layers);
      for (std::size_t n = 0; n < neg_states.size(); ++n) {
        backprop_module(enc, neg_states[n], z_first, head.z_layer,
                        pred_c * (h_value * g.z_coeff[n + 1]), buf.layers);
      }
      backprop_module(enc, past.state, c_first, head.c_layer, g.c_grad * h_value, buf.layers);
      buf.heads[i].pred.axpy(h_value, g.pred);
      r.loss = g.loss;
      r.u = g.scores[0];
      r.active = true;
      any = true;
      continue;
    }

    const Tensor<T>& retro = retro_matrix(head, retro_mode, scratch);
    T loss{0};
    std::size_t active = 0;
    for (std::size_t term = 0; term <= negatives.size(); ++term) {
      const EncoderState<T>& zs = term == 0 ? now : neg_states[term - 1];
      const int label = term == 0 ? 1 : -1;
      const Tensor<T>& z = zs.vec(head.z_layer);
      const T u_z = score(z, c, head.w_pred);
      const T u_c = dot(z, matvec_transposed(retro, c));
      Modulator<T> mz = modulator(u_z, label, h_value);
      Modulator<T> mc = modulator(u_c, label, h_value);
      mz.gamma *= inv_terms;
      mc.gamma *= inv_terms;
      loss += clapp_loss(u_z, label);
      if (mz.h != T{0}) ++active;
      if (term == 0) r.u = u_z;

      if (reference) {
        if (mz.gamma != T{0}) {
          Tensor<T> up = matvec(head.w_pred, c);
          up *= mz.gamma;
          backprop_module(enc, zs, z_first, head.z_layer, up, buf.layers);
          Tensor<T> upc = matvec(retro, z);
          upc *= mz.gamma;
          backprop_module(enc, past.state, c_first, head.c_layer, upc, buf.layers);
          buf.heads[i].pred += update_predictor(z, c, mz).pred;
        }
        continue;
      }
      buf.layers[head.z_layer] += update_predicted_layer(
          enc.spec(head.z_layer), zs.layers[head.z_layer], c, head.w_pred, mz);
      if (retro_mode != RetroMode::zero) {
        buf.layers[head.c_layer] += update_context_layer(
            enc.spec(head.c_layer), past.state.layers[head.c_layer], z, retro, mc);
      }
      HeadUpdate<T> hu = update_predictor(z, c, mz);
      if (retro_mode == RetroMode::learned) {
        if (mc.gamma != mz.gamma) hu.retro = update_predictor(z, c, mc).retro;
      } else {
        hu.retro.fill(T{0});
      }
      buf.heads[i] += hu;
    }
    r.loss = loss * inv_terms;
    r.active = active > 0;
    any = true;
  }
  if (any) ++buf.events;
  return out;
}

}  // namespace clapp
