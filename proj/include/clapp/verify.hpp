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

// Independent gradient oracles and the randomized equivalence suite.
//
// The oracles here re-implement dense layers, scores, losses and the blocked
// GRU with their own loops, so they never run through the code they certify.
// Blocking is expressed by freezing: every layer input (and, for the GRU, the
// hidden state seen by the gates) is recorded once at the base parameters and
// then held fixed while a parameter is perturbed.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clapp/plasticity.hpp"
#include "clapp/recurrent.hpp"

namespace clapp::verify {

constexpr double kFdStep = 1e-5;
constexpr double kRuleTolerance = 1e-6;  // rule vs analytic, relative L2
constexpr double kFdTolerance = 1e-5;    // rule vs finite differences, relative L2
constexpr double kKinkRadius = 1e-3;
constexpr double kNormalizationTolerance = 1e-12;
constexpr std::size_t kDefaultInstances = 50;
constexpr std::uint64_t kMasterSeed = 0xC1A99ull;

/// Central differences (L(p + h) - L(p - h)) / 2h for every entry of every
/// tensor in `params`. The loss reads the tensors through whatever references
/// it captured; they are restored exactly after each probe.
inline std::vector<Tensor<double>> finite_diff(const std::function<double()>& loss,
                                               const std::vector<Tensor<double>*>& params,
                                               double h = kFdStep) {
  if (!(h > 0)) throw NumericError("finite-difference step must be positive");
  std::vector<Tensor<double>> grads;
  for (Tensor<double>* p : params) {
    Tensor<double> g(p->shape());
    for (std::size_t k = 0; k < p->size(); ++k) {
      const double saved = (*p)[k];
      (*p)[k] = saved + h;
      const double lp = loss();
      (*p)[k] = saved - h;
      const double lm = loss();
      (*p)[k] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericError("loss is not finite during finite differences");
      }
      g[k] = (lp - lm) / (2 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Oracle dense network

struct DenseLayer {
  Tensor<double> w;  // out x in
  Tensor<double> b;  // out
  bool relu = true;

  std::size_t in() const { return w.dim(1); }
  std::size_t out() const { return w.dim(0); }
};

inline double oracle_act(double a, bool relu) { return relu ? (a > 0 ? a : 0.0) : a; }
inline double oracle_act_prime(double a, bool relu) { return relu ? (a > 0 ? 1.0 : 0.0) : 1.0; }

inline Tensor<double> oracle_pre(const DenseLayer& l, const Tensor<double>& x) {
  const std::size_t out = l.out(), in = l.in();
  Tensor<double> a({out});
  for (std::size_t o = 0; o < out; ++o) {
    double s = l.b[o];
    for (std::size_t i = 0; i < in; ++i) s += l.w[o * in + i] * x[i];
    a[o] = s;
  }
  return a;
}

inline Tensor<double> oracle_out(const DenseLayer& l, const Tensor<double>& x) {
  Tensor<double> a = oracle_pre(l, x);
  for (auto& v : a.data()) v = oracle_act(v, l.relu);
  return a;
}

struct DenseRun {
  std::vector<Tensor<double>> input, pre, out;
};

inline DenseRun oracle_run(const std::vector<DenseLayer>& net, Tensor<double> x) {
  DenseRun r;
  for (const auto& l : net) {
    r.input.push_back(x);
    r.pre.push_back(oracle_pre(l, x));
    x = r.pre.back();
    for (auto& v : x.data()) v = oracle_act(v, l.relu);
    r.out.push_back(x);
  }
  return r;
}

/// zᵀ W c with explicit loops.
inline double oracle_bilinear(const Tensor<double>& z, const Tensor<double>& w,
                              const Tensor<double>& c) {
  const std::size_t dz = w.dim(0), dc = w.dim(1);
  double u = 0;
  for (std::size_t j = 0; j < dz; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < dc; ++k) s += w[j * dc + k] * c[k];
    u += z[j] * s;
  }
  return u;
}

inline double oracle_hinge(double u, int y) { return std::max(0.0, 1.0 - y * u); }

inline Encoder<double> to_encoder(const std::vector<DenseLayer>& net) {
  std::vector<LayerSpec> specs;
  for (const auto& l : net)
    specs.push_back(LayerSpec::dense(l.in(), l.out(),
                                     l.relu ? Activation::relu : Activation::linear));
  Encoder<double> enc(specs, {net.front().in()});
  for (std::size_t i = 0; i < net.size(); ++i) {
    enc.params(i).weight = net[i].w;
    enc.params(i).bias = net[i].b;
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Random instances

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t rule, std::uint64_t i) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (rule * 100003ull + i + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Tensor<double> uniform_tensor(const Shape& s, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline Tensor<double> gaussian_tensor(const Shape& s, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline std::size_t draw_width(std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(3, 16)(rng);
}

/// A random dense stack of 1-3 layers with widths in [3, 16].
inline std::vector<DenseLayer> random_dense_net(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t depth = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  std::size_t width = draw_width(rng);
  std::vector<DenseLayer> net;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t out = draw_width(rng);
    DenseLayer layer;
    layer.w = uniform_tensor({out, width}, 1.5 / std::sqrt(static_cast<double>(width)), rng);
    layer.b = uniform_tensor({out}, 0.3, rng);
    layer.relu = u01(rng) < 0.75;
    net.push_back(std::move(layer));
    width = out;
  }
  return net;
}

struct HingeInstance {
  std::vector<DenseLayer> net;
  Tensor<double> x_now, x_past;
  Tensor<double> w_pred;
  std::size_t z_layer = 0, c_layer = 0;
  int y = 1;
  double eta = 0.05;
  std::uint64_t seed = 0;
};

/// Forward values at the base parameters; these are the frozen inputs.
struct HingeFrozen {
  DenseRun now, past;
  Tensor<double> z, c;
  double u = 0;
};

inline HingeFrozen freeze(const HingeInstance& in) {
  HingeFrozen f;
  f.now = oracle_run(in.net, in.x_now);
  f.past = oracle_run(in.net, in.x_past);
  f.z = f.now.out[in.z_layer];
  f.c = f.past.out[in.c_layer];
  f.u = oracle_bilinear(f.z, in.w_pred, f.c);
  return f;
}

/// Score with the predicted layer evaluated by `for_z` and the context layer
/// by `for_c`, both on their frozen inputs.
inline double blocked_score(const HingeInstance& in, const HingeFrozen& f,
                            const DenseLayer& for_z, const DenseLayer& for_c,
                            const Tensor<double>& w_pred) {
  return oracle_bilinear(oracle_out(for_z, f.now.input[in.z_layer]), w_pred,
                         oracle_out(for_c, f.past.input[in.c_layer]));
}

inline HingeInstance make_hinge_instance(std::uint64_t seed, bool force_inactive) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  HingeInstance in;
  in.seed = seed;
  in.net = random_dense_net(rng);
  const std::size_t d0 = in.net.front().in();
  in.x_now = gaussian_tensor({d0}, rng);
  in.x_past = gaussian_tensor({d0}, rng);
  in.z_layer = std::uniform_int_distribution<std::size_t>(0, in.net.size() - 1)(rng);
  in.c_layer = in.z_layer;
  if (in.z_layer + 1 < in.net.size() && u01(rng) < 0.5) in.c_layer = in.z_layer + 1;
  in.y = u01(rng) < 0.5 ? 1 : -1;
  const std::size_t dz = in.net[in.z_layer].out(), dc = in.net[in.c_layer].out();
  in.w_pred = uniform_tensor({dz, dc}, 1.0 / std::sqrt(static_cast<double>(dc)), rng);
  if (force_inactive) {
    const double u = freeze(in).u;
    if (u != 0) in.w_pred *= 2.0 / (in.y * u);  // y u == 2
  }
  return in;
}

/// Gradients of the blocked hinge loss. `w_z`/`b_z` are taken with the
/// context held fixed, `w_c`/`b_c` with the prediction target held fixed; for a
/// shared layer the full gradient is their sum.
struct HingeGrads {
  Tensor<double> w_z, b_z, w_c, b_c, w_pred;
  double u = 0;
  bool active = false;
};

inline HingeGrads blocked_analytic_grad(const HingeInstance& in) {
  const HingeFrozen f = freeze(in);
  const DenseLayer& lz = in.net[in.z_layer];
  const DenseLayer& lc = in.net[in.c_layer];
  const std::size_t dz = lz.out(), dc = lc.out();
  HingeGrads g;
  g.u = f.u;
  g.active = in.y * f.u < 1.0;
  const double gu = g.active ? -static_cast<double>(in.y) : 0.0;  // dL/du

  std::vector<double> pc(dz, 0.0), rz(dc, 0.0);
  for (std::size_t j = 0; j < dz; ++j)
    for (std::size_t k = 0; k < dc; ++k) {
      pc[j] += in.w_pred[j * dc + k] * f.c[k];
      rz[k] += in.w_pred[j * dc + k] * f.z[j];
    }
  const Tensor<double>& xz = f.now.input[in.z_layer];
  const Tensor<double>& xc = f.past.input[in.c_layer];
  g.w_z = Tensor<double>({dz, lz.in()});
  g.b_z = Tensor<double>({dz});
  for (std::size_t j = 0; j < dz; ++j) {
    const double s = gu * pc[j] * oracle_act_prime(f.now.pre[in.z_layer][j], lz.relu);
    g.b_z[j] = s;
    for (std::size_t i = 0; i < lz.in(); ++i) g.w_z[j * lz.in() + i] = s * xz[i];
  }
  g.w_c = Tensor<double>({dc, lc.in()});
  g.b_c = Tensor<double>({dc});
  for (std::size_t k = 0; k < dc; ++k) {
    const double s = gu * rz[k] * oracle_act_prime(f.past.pre[in.c_layer][k], lc.relu);
    g.b_c[k] = s;
    for (std::size_t l = 0; l < lc.in(); ++l) g.w_c[k * lc.in() + l] = s * xc[l];
  }
  g.w_pred = Tensor<double>({dz, dc});
  for (std::size_t j = 0; j < dz; ++j)
    for (std::size_t k = 0; k < dc; ++k) g.w_pred[j * dc + k] = gu * f.z[j] * f.c[k];
  return g;
}

struct CpcInstance {
  std::vector<DenseLayer> net;
  Tensor<double> x_pos, x_past;
  std::vector<Tensor<double>> x_negs;
  Tensor<double> w_pred;
  std::size_t z_layer = 0, c_layer = 0;
  std::uint64_t seed = 0;
};

inline CpcInstance make_cpc_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  CpcInstance in;
  in.seed = seed;
  in.net = random_dense_net(rng);
  const std::size_t d0 = in.net.front().in();
  in.x_pos = gaussian_tensor({d0}, rng);
  in.x_past = gaussian_tensor({d0}, rng);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
  for (std::size_t i = 0; i < n; ++i) in.x_negs.push_back(gaussian_tensor({d0}, rng));
  in.z_layer = std::uniform_int_distribution<std::size_t>(0, in.net.size() - 1)(rng);
  in.c_layer = in.z_layer;
  if (in.z_layer + 1 < in.net.size() && u01(rng) < 0.5) in.c_layer = in.z_layer + 1;
  const std::size_t dz = in.net[in.z_layer].out(), dc = in.net[in.c_layer].out();
  in.w_pred = uniform_tensor({dz, dc}, 1.0 / std::sqrt(static_cast<double>(dc)), rng);
  return in;
}

struct CpcFrozen {
  std::vector<DenseRun> z_runs;  // positive first
  DenseRun past;
};

inline CpcFrozen freeze(const CpcInstance& in) {
  CpcFrozen f;
  f.z_runs.push_back(oracle_run(in.net, in.x_pos));
  for (const auto& x : in.x_negs) f.z_runs.push_back(oracle_run(in.net, x));
  f.past = oracle_run(in.net, in.x_past);
  return f;
}

/// -log softmax_0 of the scores, from frozen layer inputs.
inline double blocked_cpc_loss(const CpcInstance& in, const CpcFrozen& f,
                               const DenseLayer& for_z, const DenseLayer& for_c,
                               const Tensor<double>& w_pred) {
  const Tensor<double> c = oracle_out(for_c, f.past.input[in.c_layer]);
  std::vector<double> s;
  for (const auto& run : f.z_runs)
    s.push_back(oracle_bilinear(oracle_out(for_z, run.input[in.z_layer]), w_pred, c));
  const double m = *std::max_element(s.begin(), s.end());
  double zsum = 0;
  for (double v : s) zsum += std::exp(v - m);
  return -(s[0] - m - std::log(zsum));
}

/// Loss gradients (descent directions are their negation).
struct CpcGrads {
  Tensor<double> w_z, b_z, w_c, b_c, w_pred;
  std::vector<double> pi;
};

inline CpcGrads blocked_cpc_grad(const CpcInstance& in) {
  const CpcFrozen f = freeze(in);
  const DenseLayer& lz = in.net[in.z_layer];
  const DenseLayer& lc = in.net[in.c_layer];
  const std::size_t dz = lz.out(), dc = lc.out(), n = f.z_runs.size();
  const Tensor<double>& c = f.past.out[in.c_layer];
  std::vector<double> pc(dz, 0.0);
  for (std::size_t j = 0; j < dz; ++j)
    for (std::size_t k = 0; k < dc; ++k) pc[j] += in.w_pred[j * dc + k] * c[k];
  std::vector<double> s(n);
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0;
    for (std::size_t j = 0; j < dz; ++j) v += f.z_runs[t].out[in.z_layer][j] * pc[j];
    s[t] = v;
  }
  const double m = *std::max_element(s.begin(), s.end());
  double zsum = 0;
  for (double v : s) zsum += std::exp(v - m);
  CpcGrads g;
  for (double v : s) g.pi.push_back(std::exp(v - m) / zsum);

  // dL/du_t = pi_t - [t == 0]
  std::vector<double> mix(dz, 0.0);  // sum_t dL/du_t z_t
  g.w_z = Tensor<double>({dz, lz.in()});
  g.b_z = Tensor<double>({dz});
  for (std::size_t t = 0; t < n; ++t) {
    const double du = g.pi[t] - (t == 0 ? 1.0 : 0.0);
    const DenseRun& r = f.z_runs[t];
    for (std::size_t j = 0; j < dz; ++j) {
      mix[j] += du * r.out[in.z_layer][j];
      const double sj = du * pc[j] * oracle_act_prime(r.pre[in.z_layer][j], lz.relu);
      g.b_z[j] += sj;
      for (std::size_t i = 0; i < lz.in(); ++i)
        g.w_z[j * lz.in() + i] += sj * r.input[in.z_layer][i];
    }
  }
  g.w_pred = Tensor<double>({dz, dc});
  for (std::size_t j = 0; j < dz; ++j)
    for (std::size_t k = 0; k < dc; ++k) g.w_pred[j * dc + k] = mix[j] * c[k];
  g.w_c = Tensor<double>({dc, lc.in()});
  g.b_c = Tensor<double>({dc});
  for (std::size_t k = 0; k < dc; ++k) {
    double back = 0;
    for (std::size_t j = 0; j < dz; ++j) back += in.w_pred[j * dc + k] * mix[j];
    const double sk = back * oracle_act_prime(f.past.pre[in.c_layer][k], lc.relu);
    g.b_c[k] = sk;
    for (std::size_t l = 0; l < lc.in(); ++l)
      g.w_c[k * lc.in() + l] = sk * f.past.input[in.c_layer][l];
  }
  return g;
}

struct EpropInstance {
  GruParams<double> params;
  std::vector<Tensor<double>> xs, signals;
  Tensor<double> h0;
  std::uint64_t seed = 0;
};

inline EpropInstance make_eprop_instance(std::uint64_t seed, std::size_t length = 0) {
  std::mt19937_64 rng(seed);
  EpropInstance in;
  in.seed = seed;
  const std::size_t input = draw_width(rng), hidden = draw_width(rng);
  if (length == 0) length = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
  in.params = GruParams<double>::zeros(input, hidden);
  for (auto& t : in.params.t) t = uniform_tensor(t.shape(), 1.0, rng);
  in.h0 = uniform_tensor({hidden}, 0.5, rng);
  for (std::size_t t = 0; t < length; ++t) {
    in.xs.push_back(gaussian_tensor({input}, rng));
    in.signals.push_back(gaussian_tensor({hidden}, rng));
  }
  return in;
}

/// One GRU step with the gates reading `h_gate` and the carry reading
/// `h_carry`.
inline Tensor<double> oracle_gru_step(const GruParams<double>& p, const Tensor<double>& x,
                                      const Tensor<double>& h_gate,
                                      const Tensor<double>& h_carry) {
  const std::size_t hd = p.hidden_dim(), in = p.input_dim();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Tensor<double> h({hd});
  for (std::size_t i = 0; i < hd; ++i) {
    double ar = p.b_ir()[i] + p.b_hr()[i], az = p.b_iz()[i] + p.b_hz()[i], an = p.b_in()[i],
           ah = p.b_hn()[i];
    for (std::size_t j = 0; j < in; ++j) {
      ar += p.w_ir()[i * in + j] * x[j];
      az += p.w_iz()[i * in + j] * x[j];
      an += p.w_in()[i * in + j] * x[j];
    }
    for (std::size_t j = 0; j < hd; ++j) {
      ar += p.w_hr()[i * hd + j] * h_gate[j];
      az += p.w_hz()[i * hd + j] * h_gate[j];
      ah += p.w_hn()[i * hd + j] * h_gate[j];
    }
    const double r = sig(ar), z = sig(az), n = std::tanh(an + r * ah);
    h[i] = (1 - z) * n + z * h_carry[i];
  }
  return h;
}

/// Hidden states entering each step at the base parameters.
inline std::vector<Tensor<double>> frozen_gate_inputs(const EpropInstance& in) {
  std::vector<Tensor<double>> hs;
  Tensor<double> h = in.h0;
  for (const auto& x : in.xs) {
    hs.push_back(h);
    h = oracle_gru_step(in.params, x, h, h);
  }
  return hs;
}

/// sum_t <signal_t, h_t> of the blocked network: gates see the frozen hidden
/// state, the carry sees the live one.
inline double blocked_gru_loss(const EpropInstance& in, const GruParams<double>& p,
                               const std::vector<Tensor<double>>& frozen) {
  double loss = 0;
  Tensor<double> h = in.h0;
  for (std::size_t t = 0; t < in.xs.size(); ++t) {
    h = oracle_gru_step(p, in.xs[t], frozen[t], h);
    for (std::size_t i = 0; i < h.size(); ++i) loss += in.signals[t][i] * h[i];
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Reports

/// Errors of one rule output tensor against its references.
struct TensorError {
  std::string name;
  double rel_analytic = -1;  // negative when no analytic reference exists
  double rel_fd = 0;
  double max_abs = 0;        // max |rule - finite-difference reference|
};

/// Outcome of one randomized instance.
struct GradReport {
  std::string rule;
  std::size_t instance = 0;
  std::uint64_t seed = 0;
  std::vector<TensorError> tensors;
  bool kink = false;        // a ReLU pre-activation or the hinge margin within kKinkRadius
  bool degenerate = false;  // no activity reaches the rule
  bool inactive = false;    // hinge margin satisfied
  bool nonzero_when_inactive = false;
  double normalization_error = 0;  // |sum pi - 1| for the softmax reference
  nlohmann::json dump;
  // Squared norms over all compared tensors jointly. A single tensor can have
  // an exactly vanishing true gradient (e.g. a bias whose terms cancel), so
  // the instance is judged on the whole update vector.
  double diff_analytic2 = 0, ref_analytic2 = 0, diff_fd2 = 0, ref_fd2 = 0;
  bool has_analytic = false;

  static double joint(double diff2, double ref2) {
    return ref2 == 0 ? std::sqrt(diff2) : std::sqrt(diff2 / ref2);
  }
  double max_rel_analytic() const {
    return has_analytic ? joint(diff_analytic2, ref_analytic2) : 0.0;
  }
  double max_rel_fd() const { return joint(diff_fd2, ref_fd2); }
  bool flagged() const { return kink || degenerate; }
  bool breach() const {
    if (nonzero_when_inactive || normalization_error > kNormalizationTolerance) return true;
    if (flagged()) return false;
    return max_rel_analytic() >= kRuleTolerance || max_rel_fd() >= kFdTolerance;
  }
};

struct RuleSummary {
  std::string rule;
  std::size_t instances = 0, asserted = 0, kink = 0, degenerate = 0, inactive = 0,
              breaches = 0;
  double max_rel_analytic = 0, mean_rel_analytic = 0;
  double max_rel_fd = 0, mean_rel_fd = 0;
  double max_normalization_error = 0;
  double seconds = 0;
  std::size_t worst = 0;
  bool passed() const { return breaches == 0; }
};

struct EquivalenceReport {
  std::vector<RuleSummary> rules;
  std::vector<GradReport> instances;

  bool passed() const {
    for (const auto& r : rules)
      if (!r.passed()) return false;
    return true;
  }
  const RuleSummary& rule(const std::string& name) const {
    for (const auto& r : rules)
      if (r.rule == name) return r;
    throw InputError("no rule '" + name + "' in report");
  }
  nlohmann::json to_json() const;
  std::string summary() const;
};

struct VerifyOptions {
  std::size_t instances = kDefaultInstances;
  std::uint64_t seed = kMasterSeed;
  /// Name of a rule whose output is sign-flipped before comparison (mutation
  /// testing of the suite itself).
  std::string corrupt;
  double fd_step = kFdStep;
};

inline const std::vector<std::string>& rule_names() {
  static const std::vector<std::string> names{"predicted-layer", "context-layer", "predictor",
                                              "clapp-step",      "cpc-reference", "eprop"};
  return names;
}

inline nlohmann::json tensor_json(const Tensor<double>& t) {
  return {{"shape", t.shape()}, {"data", t.storage()}};
}

namespace detail {

inline void accumulate(const Tensor<double>& a, const Tensor<double>& ref, double& diff2,
                       double& ref2) {
  a.require_same_shape(ref, "gradient comparison");
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff2 += (a[i] - ref[i]) * (a[i] - ref[i]);
    ref2 += ref[i] * ref[i];
  }
}

inline void compare(GradReport& r, const std::string& name, const Tensor<double>& rule,
                    const Tensor<double>* analytic, const Tensor<double>& fd) {
  TensorError e;
  e.name = name;
  if (analytic) {
    e.rel_analytic = relative_l2_error(rule, *analytic);
    accumulate(rule, *analytic, r.diff_analytic2, r.ref_analytic2);
    r.has_analytic = true;
  }
  e.rel_fd = relative_l2_error(rule, fd);
  accumulate(rule, fd, r.diff_fd2, r.ref_fd2);
  e.max_abs = max_abs(rule - fd);
  r.dump[name] = {{"rule", tensor_json(rule)}, {"finite_difference", tensor_json(fd)}};
  if (analytic) r.dump[name]["analytic"] = tensor_json(*analytic);
  r.tensors.push_back(e);
}

inline Tensor<double> scaled(Tensor<double> t, double s) {
  t *= s;
  return t;
}

inline bool hinge_kink(const HingeInstance& in, const HingeFrozen& f) {
  if (std::abs(in.y * f.u - 1.0) < kKinkRadius) return true;
  auto near = [](const Tensor<double>& pre, bool relu) {
    if (!relu) return false;
    for (double a : pre.data())
      if (std::abs(a) < kKinkRadius) return true;
    return false;
  };
  return near(f.now.pre[in.z_layer], in.net[in.z_layer].relu) ||
         near(f.past.pre[in.c_layer], in.net[in.c_layer].relu);
}

inline bool all_zero(const Tensor<double>& t) { return max_abs(t) == 0.0; }

inline void hinge_flags(GradReport& r, const HingeInstance& in, const HingeFrozen& f) {
  r.kink = hinge_kink(in, f);
  r.degenerate = all_zero(f.z) || all_zero(f.c);
  r.inactive = in.y * f.u >= 1.0;
  r.dump["seed"] = in.seed;
  r.dump["y"] = in.y;
  r.dump["u"] = f.u;
  r.dump["z_layer"] = in.z_layer;
  r.dump["c_layer"] = in.c_layer;
}

inline GradReport run_predicted(const HingeInstance& in, bool corrupt, double h) {
  GradReport r;
  const HingeFrozen f = freeze(in);
  hinge_flags(r, in, f);
  const Encoder<double> enc = to_encoder(in.net);
  const EncoderState<double> now = enc.forward(in.x_now), past = enc.forward(in.x_past);
  const Tensor<double>& c = past.vec(in.c_layer);
  const Modulator<double> mod =
      modulator(score(now.vec(in.z_layer), c, in.w_pred), in.y, in.eta);
  LayerGrads<double> rule = update_predicted_layer(enc.spec(in.z_layer),
                                                   now.layers[in.z_layer], c, in.w_pred, mod);
  if (corrupt) rule.axpy(-2.0, rule);

  const HingeGrads g = blocked_analytic_grad(in);
  DenseLayer lz = in.net[in.z_layer];
  const auto fd = finite_diff(
      [&] { return oracle_hinge(blocked_score(in, f, lz, in.net[in.c_layer], in.w_pred), in.y); },
      {&lz.w, &lz.b}, h);
  const Tensor<double> aw = scaled(g.w_z, -in.eta), ab = scaled(g.b_z, -in.eta);
  compare(r, "W", rule.weight, &aw, scaled(fd[0], -in.eta));
  compare(r, "b", rule.bias, &ab, scaled(fd[1], -in.eta));
  r.nonzero_when_inactive = r.inactive && (!all_zero(rule.weight) || !all_zero(rule.bias));
  return r;
}

inline GradReport run_context(const HingeInstance& in, bool corrupt, double h) {
  GradReport r;
  const HingeFrozen f = freeze(in);
  hinge_flags(r, in, f);
  const Encoder<double> enc = to_encoder(in.net);
  const EncoderState<double> now = enc.forward(in.x_now), past = enc.forward(in.x_past);
  const Tensor<double>& z = now.vec(in.z_layer);
  const Tensor<double> retro = transpose(in.w_pred);
  const Modulator<double> mod =
      modulator(dot(matvec(retro, z), past.vec(in.c_layer)), in.y, in.eta);
  LayerGrads<double> rule =
      update_context_layer(enc.spec(in.c_layer), past.layers[in.c_layer], z, retro, mod);
  if (corrupt) rule.axpy(-2.0, rule);

  const HingeGrads g = blocked_analytic_grad(in);
  DenseLayer lc = in.net[in.c_layer];
  const auto fd = finite_diff(
      [&] { return oracle_hinge(blocked_score(in, f, in.net[in.z_layer], lc, in.w_pred), in.y); },
      {&lc.w, &lc.b}, h);
  const Tensor<double> aw = scaled(g.w_c, -in.eta), ab = scaled(g.b_c, -in.eta);
  compare(r, "W", rule.weight, &aw, scaled(fd[0], -in.eta));
  compare(r, "b", rule.bias, &ab, scaled(fd[1], -in.eta));
  r.nonzero_when_inactive = r.inactive && (!all_zero(rule.weight) || !all_zero(rule.bias));
  return r;
}

inline GradReport run_predictor(const HingeInstance& in, bool corrupt, double h) {
  GradReport r;
  const HingeFrozen f = freeze(in);
  hinge_flags(r, in, f);
  const Encoder<double> enc = to_encoder(in.net);
  const EncoderState<double> now = enc.forward(in.x_now), past = enc.forward(in.x_past);
  const Tensor<double>& z = now.vec(in.z_layer);
  const Tensor<double>& c = past.vec(in.c_layer);
  const Modulator<double> mod = modulator(score(z, c, in.w_pred), in.y, in.eta);
  HeadUpdate<double> rule = update_predictor(z, c, mod);
  if (corrupt) {
    rule.pred *= -1.0;
    rule.retro *= -1.0;
  }

  const HingeGrads g = blocked_analytic_grad(in);
  Tensor<double> w = in.w_pred;
  const auto fd = finite_diff(
      [&] {
        return oracle_hinge(blocked_score(in, f, in.net[in.z_layer], in.net[in.c_layer], w), in.y);
      },
      {&w}, h);
  const Tensor<double> ap = scaled(g.w_pred, -in.eta);
  compare(r, "W_pred", rule.pred, &ap, scaled(fd[0], -in.eta));
  // The retrodiction update must be the exact transpose.
  const Tensor<double> pt = transpose(rule.pred);
  TensorError e;
  e.name = "W_retro";
  e.rel_analytic = relative_l2_error(rule.retro, pt);
  e.rel_fd = relative_l2_error(rule.retro, transpose(scaled(fd[0], -in.eta)));
  e.max_abs = max_abs(rule.retro - pt);
  r.tensors.push_back(e);
  if (e.max_abs != 0.0) r.nonzero_when_inactive = true;  // reciprocity is exact
  r.nonzero_when_inactive =
      r.nonzero_when_inactive || (r.inactive && (!all_zero(rule.pred) || !all_zero(rule.retro)));
  return r;
}

inline GradReport run_clapp_step(const HingeInstance& in, bool corrupt, double h) {
  GradReport r;
  const HingeFrozen f = freeze(in);
  hinge_flags(r, in, f);
  const Encoder<double> enc = to_encoder(in.net);
  HyperParams hp;
  hp.eta = in.eta;
  hp.optimizer_scales = false;
  hp.retro = RetroMode::learned;
  std::vector<PredictorHead<double>> heads{
      {in.w_pred, transpose(in.w_pred), in.z_layer, in.c_layer, 1}};
  UpdateBuffer<double> buf(enc, heads);
  TraceBuffer<double> trace(2);
  clapp_step(in.x_past, 1, 0, enc, trace, heads, hp, buf);
  clapp_step(in.x_now, in.y, in.y > 0 ? 0 : 1, enc, trace, heads, hp, buf);
  if (corrupt) {
    for (auto& l : buf.layers) l.axpy(-2.0, l);
    buf.heads[0].pred *= -1.0;
    buf.heads[0].retro *= -1.0;
  }

  // Full blocked loss: every layer and the predictor perturbed together.
  std::vector<DenseLayer> net = in.net;
  Tensor<double> w = in.w_pred;
  std::vector<Tensor<double>*> ptrs;
  for (auto& l : net) {
    ptrs.push_back(&l.w);
    ptrs.push_back(&l.b);
  }
  ptrs.push_back(&w);
  const auto fd = finite_diff(
      [&] {
        return oracle_hinge(blocked_score(in, f, net[in.z_layer], net[in.c_layer], w), in.y);
      },
      ptrs, h);

  const HingeGrads g = blocked_analytic_grad(in);
  for (std::size_t l = 0; l < in.net.size(); ++l) {
    Tensor<double> aw(in.net[l].w.shape()), ab(in.net[l].b.shape());
    if (l == in.z_layer) {
      aw += g.w_z;
      ab += g.b_z;
    }
    if (l == in.c_layer) {
      aw += g.w_c;
      ab += g.b_c;
    }
    aw *= -in.eta;
    ab *= -in.eta;
    const std::string tag = "layer" + std::to_string(l);
    compare(r, tag + ".W", buf.layers[l].weight, &aw,
                                scaled(fd[2 * l], -in.eta));
    compare(r, tag + ".b", buf.layers[l].bias, &ab,
                                scaled(fd[2 * l + 1], -in.eta));
    if (r.inactive && (!all_zero(buf.layers[l].weight) || !all_zero(buf.layers[l].bias)))
      r.nonzero_when_inactive = true;
  }
  const Tensor<double> ap = scaled(g.w_pred, -in.eta);
  compare(r, "W_pred", buf.heads[0].pred, &ap, scaled(fd.back(), -in.eta));
  if (r.inactive && (!all_zero(buf.heads[0].pred) || !all_zero(buf.heads[0].retro)))
    r.nonzero_when_inactive = true;
  return r;
}

inline GradReport run_cpc(const CpcInstance& in, bool corrupt, double h) {
  GradReport r;
  const CpcFrozen f = freeze(in);
  r.dump["seed"] = in.seed;
  r.dump["negatives"] = in.x_negs.size();
  r.dump["z_layer"] = in.z_layer;
  r.dump["c_layer"] = in.c_layer;
  auto near = [](const Tensor<double>& pre, bool relu) {
    if (!relu) return false;
    for (double a : pre.data())
      if (std::abs(a) < kKinkRadius) return true;
    return false;
  };
  for (const auto& run : f.z_runs)
    r.kink = r.kink || near(run.pre[in.z_layer], in.net[in.z_layer].relu);
  r.kink = r.kink || near(f.past.pre[in.c_layer], in.net[in.c_layer].relu);
  r.degenerate = all_zero(f.past.out[in.c_layer]);

  const Encoder<double> enc = to_encoder(in.net);
  const EncoderState<double> pos = enc.forward(in.x_pos), past = enc.forward(in.x_past);
  std::vector<LayerCache<double>> negs;
  for (const auto& x : in.x_negs) negs.push_back(enc.forward(x).layers[in.z_layer]);
  CpcReferenceGrads<double> rule =
      cpc_reference_grads(enc.spec(in.c_layer), past.layers[in.c_layer], enc.spec(in.z_layer),
                          pos.layers[in.z_layer], negs, in.w_pred);
  if (corrupt) {
    rule.pred *= -1.0;
    rule.w_z.axpy(-2.0, rule.w_z);
    rule.w_c.axpy(-2.0, rule.w_c);
  }
  double total = 0;
  for (double p : rule.probabilities) total += p;
  r.normalization_error = std::abs(total - 1.0);

  const CpcGrads g = blocked_cpc_grad(in);
  // The rule returns ascent directions of log pi, i.e. minus the loss gradient.
  const Tensor<double> ap = scaled(g.w_pred, -1.0);
  Tensor<double> w = in.w_pred;
  const auto fd_pred = finite_diff(
      [&] { return blocked_cpc_loss(in, f, in.net[in.z_layer], in.net[in.c_layer], w); }, {&w},
      h);
  compare(r, "W_pred", rule.pred, &ap, scaled(fd_pred[0], -1.0));

  if (in.z_layer == in.c_layer) {
    DenseLayer l = in.net[in.z_layer];
    const auto fd = finite_diff([&] { return blocked_cpc_loss(in, f, l, l, in.w_pred); },
                                {&l.w, &l.b}, h);
    LayerGrads<double> sum = rule.w_z;
    sum += rule.w_c;
    const Tensor<double> aw = scaled(g.w_z + g.w_c, -1.0), ab = scaled(g.b_z + g.b_c, -1.0);
    compare(r, "W", sum.weight, &aw, scaled(fd[0], -1.0));
    compare(r, "b", sum.bias, &ab, scaled(fd[1], -1.0));
  } else {
    DenseLayer lz = in.net[in.z_layer], lc = in.net[in.c_layer];
    const auto fd = finite_diff([&] { return blocked_cpc_loss(in, f, lz, lc, in.w_pred); },
                                {&lz.w, &lz.b, &lc.w, &lc.b}, h);
    const Tensor<double> awz = scaled(g.w_z, -1.0), abz = scaled(g.b_z, -1.0),
                         awc = scaled(g.w_c, -1.0), abc = scaled(g.b_c, -1.0);
    compare(r, "W_z", rule.w_z.weight, &awz, scaled(fd[0], -1.0));
    compare(r, "b_z", rule.w_z.bias, &abz, scaled(fd[1], -1.0));
    compare(r, "W_c", rule.w_c.weight, &awc, scaled(fd[2], -1.0));
    compare(r, "b_c", rule.w_c.bias, &abc, scaled(fd[3], -1.0));
  }
  return r;
}

inline GradReport run_eprop(const EpropInstance& in, bool corrupt, double h) {
  GradReport r;
  r.dump["seed"] = in.seed;
  r.dump["length"] = in.xs.size();
  const auto cache = gru_run(in.params, in.xs, in.h0);
  GruParams<double> rule = eprop_update(cache, in.signals);
  if (corrupt)
    for (auto& t : rule.t) t *= -1.0;
  bool zero_signal = true;
  for (const auto& s : in.signals) zero_signal = zero_signal && all_zero(s);
  r.degenerate = zero_signal;

  const auto frozen = frozen_gate_inputs(in);
  GruParams<double> p = in.params;
  std::vector<Tensor<double>*> ptrs;
  for (auto& t : p.t) ptrs.push_back(&t);
  const auto fd = finite_diff([&] { return blocked_gru_loss(in, p, frozen); }, ptrs, h);
  for (std::size_t k = 0; k < GruParams<double>::kCount; ++k)
    compare(r, GruParams<double>::name(k), rule.t[k], nullptr, fd[k]);
  return r;
}

}  // namespace detail

/// Runs `opts.instances` seeded instances of each rule in `scope` ("all" or a
/// rule name) and aggregates the comparisons.
inline EquivalenceReport equivalence_report(const std::string& scope,
                                            const VerifyOptions& opts = {}) {
  const auto& names = rule_names();
  if (scope != "all" && std::find(names.begin(), names.end(), scope) == names.end()) {
    throw InputError("unknown gradcheck scope '" + scope + "'");
  }
  if (!opts.corrupt.empty() &&
      std::find(names.begin(), names.end(), opts.corrupt) == names.end()) {
    throw InputError("unknown rule to corrupt '" + opts.corrupt + "'");
  }
  EquivalenceReport report;
  for (std::size_t ri = 0; ri < names.size(); ++ri) {
    const std::string& name = names[ri];
    if (scope != "all" && scope != name) continue;
    const bool corrupt = opts.corrupt == name;
    const auto start = std::chrono::steady_clock::now();
    RuleSummary s;
    s.rule = name;
    double worst_score = -1;
    std::size_t n_analytic = 0;
    for (std::size_t i = 0; i < opts.instances; ++i) {
      const std::uint64_t seed = mix_seed(opts.seed, ri, i);
      // Every fifth hinge instance is pushed past the margin.
      const bool force_inactive = i % 5 == 4;
      GradReport g;
      if (name == "predicted-layer") {
        g = detail::run_predicted(make_hinge_instance(seed, force_inactive), corrupt, opts.fd_step);
      } else if (name == "context-layer") {
        g = detail::run_context(make_hinge_instance(seed, force_inactive), corrupt, opts.fd_step);
      } else if (name == "predictor") {
        g = detail::run_predictor(make_hinge_instance(seed, force_inactive), corrupt, opts.fd_step);
      } else if (name == "clapp-step") {
        g = detail::run_clapp_step(make_hinge_instance(seed, force_inactive), corrupt,
                                   opts.fd_step);
      } else if (name == "cpc-reference") {
        g = detail::run_cpc(make_cpc_instance(seed), corrupt, opts.fd_step);
      } else {
        g = detail::run_eprop(make_eprop_instance(seed), corrupt, opts.fd_step);
      }
      g.rule = name;
      g.instance = i;
      g.seed = seed;
      ++s.instances;
      s.kink += g.kink ? 1 : 0;
      s.degenerate += g.degenerate ? 1 : 0;
      s.inactive += g.inactive ? 1 : 0;
      s.breaches += g.breach() ? 1 : 0;
      s.max_normalization_error = std::max(s.max_normalization_error, g.normalization_error);
      if (!g.flagged()) {
        ++s.asserted;
        const double ra = g.max_rel_analytic(), rf = g.max_rel_fd();
        s.max_rel_fd = std::max(s.max_rel_fd, rf);
        s.mean_rel_fd += rf;
        if (g.has_analytic) {
          s.max_rel_analytic = std::max(s.max_rel_analytic, ra);
          s.mean_rel_analytic += ra;
          ++n_analytic;
        }
      }
      const double score_now = (g.breach() ? 1e9 : 0.0) + g.max_rel_fd() +
                               g.max_rel_analytic() * 10.0;
      if (score_now > worst_score) {
        worst_score = score_now;
        s.worst = report.instances.size();
      }
      report.instances.push_back(std::move(g));
    }
    if (s.asserted > 0) s.mean_rel_fd /= static_cast<double>(s.asserted);
    if (n_analytic > 0) s.mean_rel_analytic /= static_cast<double>(n_analytic);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rules.push_back(s);
  }
  return report;
}

inline nlohmann::json EquivalenceReport::to_json() const {
  nlohmann::json j;
  j["passed"] = passed();
  j["tolerances"] = {{"rule_vs_analytic", kRuleTolerance},
                     {"rule_vs_finite_difference", kFdTolerance},
                     {"kink_radius", kKinkRadius},
                     {"finite_difference_step", kFdStep}};
  for (const auto& r : rules) {
    nlohmann::json jr = {{"rule", r.rule},
                         {"passed", r.passed()},
                         {"instances", r.instances},
                         {"asserted", r.asserted},
                         {"flagged_kink", r.kink},
                         {"flagged_degenerate", r.degenerate},
                         {"hinge_inactive", r.inactive},
                         {"breaches", r.breaches},
                         {"max_rel_vs_analytic", r.max_rel_analytic},
                         {"mean_rel_vs_analytic", r.mean_rel_analytic},
                         {"max_rel_vs_finite_difference", r.max_rel_fd},
                         {"mean_rel_vs_finite_difference", r.mean_rel_fd},
                         {"max_normalization_error", r.max_normalization_error},
                         {"seconds", r.seconds}};
    const GradReport& w = instances.at(r.worst);
    jr["worst_instance"] = {{"index", w.instance}, {"seed", w.seed}, {"breach", w.breach()},
                            {"kink", w.kink}, {"degenerate", w.degenerate},
                            {"tensors", w.dump}};
    j["rules"].push_back(jr);
  }
  return j;
}

inline std::string EquivalenceReport::summary() const {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  for (const auto& r : rules) {
    os << (r.passed() ? "PASS " : "FAIL ") << r.rule << ": " << r.instances << " instances, "
       << r.asserted << " asserted, " << r.kink << " near a kink, " << r.degenerate
       << " degenerate, " << r.inactive << " hinge-inactive; max rel err vs analytic "
       << r.max_rel_analytic << ", vs finite differences " << r.max_rel_fd;
    if (r.rule == "cpc-reference") os << ", max |sum pi - 1| " << r.max_normalization_error;
    if (!r.passed()) {
      os << "; " << r.breaches << " breaches, worst instance #" << instances.at(r.worst).instance
         << " seed " << instances.at(r.worst).seed;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace clapp::verify
