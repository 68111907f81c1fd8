#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "batchcp/core.hpp"
#include "batchcp/rng.hpp"

namespace batchcp {

// ---------------------------------------------------------------------------
// Shapes and parameters
// ---------------------------------------------------------------------------

struct NetConfig {
  Index input_dim = 1;    // lag target + covariates
  Index hidden = 4;       // LSTM units per layer
  Index dense = 3;        // ReLU layer width
  Index lstm_layers = 1;
  double sigma_floor = 1e-6;

  void validate() const {
    if (input_dim < 1) throw ConfigError("net: input_dim must be >= 1");
    if (hidden < 1) throw ConfigError("net: hidden must be >= 1");
    if (dense < 1) throw ConfigError("net: dense must be >= 1");
    if (lstm_layers < 1) throw ConfigError("net: lstm_layers must be >= 1");
    if (!(sigma_floor > 0.0)) throw ConfigError("net: sigma_floor must be > 0");
  }

  bool operator==(const NetConfig&) const = default;
};

// Gate order is fixed everywhere (parameter layout, checkpoints, gradients).
enum GateId : int { kGateInput = 0, kGateForget = 1, kGateCell = 2, kGateOutput = 3 };

struct GateParams {
  Matrix w;               // hidden x layer_input
  Matrix u;               // hidden x hidden
  std::vector<double> b;  // hidden
};

struct LstmLayerParams {
  Index input_dim = 0;
  Index hidden = 0;
  std::array<GateParams, 4> gate;
};

/// Full parameter set: stacked LSTM, ReLU dense layer, affine mu head and
/// softplus sigma head. The same struct doubles as the gradient bundle; the
/// two always share this layout, which is what makes the generic visitors
/// below (Adam, checkpoints, finite-difference checks) possible.
struct ModelParams {
  NetConfig config;
  std::vector<LstmLayerParams> lstm;
  Matrix dense_w;               // dense x hidden
  std::vector<double> dense_b;  // dense
  std::vector<double> mu_w;     // dense
  double mu_b = 0.0;
  std::vector<double> sigma_w;  // dense
  double sigma_b = 0.0;
};

using GradientBundle = ModelParams;

/// Allocates zeroed parameters with the shapes cfg prescribes.
inline ModelParams make_params(const NetConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.lstm.resize(static_cast<std::size_t>(cfg.lstm_layers));
  for (Index l = 0; l < cfg.lstm_layers; ++l) {
    auto& layer = p.lstm[static_cast<std::size_t>(l)];
    layer.input_dim = (l == 0) ? cfg.input_dim : cfg.hidden;
    layer.hidden = cfg.hidden;
    for (auto& gate : layer.gate) {
      gate.w = Matrix(cfg.hidden, layer.input_dim);
      gate.u = Matrix(cfg.hidden, cfg.hidden);
      gate.b.assign(static_cast<std::size_t>(cfg.hidden), 0.0);
    }
  }
  p.dense_w = Matrix(cfg.dense, cfg.hidden);
  p.dense_b.assign(static_cast<std::size_t>(cfg.dense), 0.0);
  p.mu_w.assign(static_cast<std::size_t>(cfg.dense), 0.0);
  p.sigma_w.assign(static_cast<std::size_t>(cfg.dense), 0.0);
  return p;
}

/// Enumerates every parameter array in a fixed order. All code that walks
/// parameters (optimizer, serialization, gradient checks) goes through this,
/// so the order can never drift between them.
template <class F>
void visit_params(ModelParams& p, F&& f) {
  for (auto& layer : p.lstm) {
    for (auto& gate : layer.gate) {
      f(std::span<double>(gate.w.data));
      f(std::span<double>(gate.u.data));
      f(std::span<double>(gate.b));
    }
  }
  f(std::span<double>(p.dense_w.data));
  f(std::span<double>(p.dense_b));
  f(std::span<double>(p.mu_w));
  f(std::span<double>(&p.mu_b, 1));
  f(std::span<double>(p.sigma_w));
  f(std::span<double>(&p.sigma_b, 1));
}

template <class F>
void visit_params(const ModelParams& p, F&& f) {
  for (const auto& layer : p.lstm) {
    for (const auto& gate : layer.gate) {
      f(std::span<const double>(gate.w.data));
      f(std::span<const double>(gate.u.data));
      f(std::span<const double>(gate.b));
    }
  }
  f(std::span<const double>(p.dense_w.data));
  f(std::span<const double>(p.dense_b));
  f(std::span<const double>(p.mu_w));
  f(std::span<const double>(&p.mu_b, 1));
  f(std::span<const double>(p.sigma_w));
  f(std::span<const double>(&p.sigma_b, 1));
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_params(z, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return z;
}

inline Index param_count(const ModelParams& p) {
  Index count = 0;
  visit_params(p, [&](std::span<const double> s) { count += static_cast<Index>(s.size()); });
  return count;
}

/// Random init: every weight matrix U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with
/// fan_in = its input width; biases zero except the forget gates at +1 so
/// early training keeps cell memory open.
inline ModelParams init_params(const NetConfig& cfg, Rng& rng) {
  ModelParams p = make_params(cfg);
  const auto fill_uniform = [&rng](std::vector<double>& data, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : data) w = bound * (2.0 * rng.next_unit() - 1.0);
  };
  for (auto& layer : p.lstm) {
    for (auto& gate : layer.gate) {
      fill_uniform(gate.w.data, layer.input_dim);
      fill_uniform(gate.u.data, layer.hidden);
    }
    std::fill(layer.gate[kGateForget].b.begin(), layer.gate[kGateForget].b.end(), 1.0);
  }
  fill_uniform(p.dense_w.data, cfg.hidden);
  fill_uniform(p.mu_w, cfg.dense);
  fill_uniform(p.sigma_w, cfg.dense);
  return p;
}

// ---------------------------------------------------------------------------
// Scalar nonlinearities
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x), overflow-safe: for large x the correction term vanishes.
inline double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

/// One prediction-step Gaussian negative log likelihood on whatever scale the
/// arguments live on.
inline double gaussian_nll(double z, double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    std::ostringstream os;
    os << "gaussian_nll: sigma must be positive and finite, got " << sigma;
    throw ConfigError(os.str());
  }
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
  const double r = (z - mu) / sigma;
  return kHalfLog2Pi + std::log(sigma) + 0.5 * r * r;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

/// Everything the backward pass needs from one (step, layer) evaluation.
struct LstmStepCache {
  std::vector<double> input;  // layer input u_t
  std::vector<double> h_prev, c_prev;
  std::vector<double> i, f, g, o;  // post-activation gates
  std::vector<double> c, tanh_c, h;
};

/// i = sig(W_i u + U_i h + b_i), f, o likewise; g = tanh(W_g u + U_g h + b_g);
/// c = f*c_prev + i*g; h = o*tanh(c). Writes the cache when given one.
inline void lstm_cell_forward(const LstmLayerParams& layer, std::span<const double> input,
                              const std::vector<double>& h_prev,
                              const std::vector<double>& c_prev, std::vector<double>& h_out,
                              std::vector<double>& c_out, LstmStepCache* cache = nullptr) {
  const Index hn = layer.hidden;
  const Index in = layer.input_dim;
  if (static_cast<Index>(input.size()) != in ||
      static_cast<Index>(h_prev.size()) != hn || static_cast<Index>(c_prev.size()) != hn) {
    throw ConfigError("lstm_cell_forward: shape mismatch");
  }
  std::array<std::vector<double>, 4> act;
  for (int gi = 0; gi < 4; ++gi) {
    const GateParams& gp = layer.gate[static_cast<std::size_t>(gi)];
    auto& a = act[static_cast<std::size_t>(gi)];
    a.assign(static_cast<std::size_t>(hn), 0.0);
    for (Index hrow = 0; hrow < hn; ++hrow) {
      double pre = gp.b[static_cast<std::size_t>(hrow)];
      for (Index j = 0; j < in; ++j) pre += gp.w(hrow, j) * input[static_cast<std::size_t>(j)];
      for (Index k = 0; k < hn; ++k) pre += gp.u(hrow, k) * h_prev[static_cast<std::size_t>(k)];
      a[static_cast<std::size_t>(hrow)] =
          (gi == kGateCell) ? std::tanh(pre) : sigmoid(pre);
    }
  }
  c_out.resize(static_cast<std::size_t>(hn));
  h_out.resize(static_cast<std::size_t>(hn));
  std::vector<double> tanh_c(static_cast<std::size_t>(hn));
  for (Index hrow = 0; hrow < hn; ++hrow) {
    const auto idx = static_cast<std::size_t>(hrow);
    c_out[idx] = act[kGateForget][idx] * c_prev[idx] + act[kGateInput][idx] * act[kGateCell][idx];
    tanh_c[idx] = std::tanh(c_out[idx]);
    h_out[idx] = act[kGateOutput][idx] * tanh_c[idx];
  }
  if (cache) {
    cache->input.assign(input.begin(), input.end());
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = std::move(act[kGateInput]);
    cache->f = std::move(act[kGateForget]);
    cache->g = std::move(act[kGateCell]);
    cache->o = std::move(act[kGateOutput]);
    cache->c = c_out;
    cache->tanh_c = std::move(tanh_c);
    cache->h = h_out;
  }
}

/// Convenience single-step API.
inline std::pair<std::vector<double>, std::vector<double>> lstm_step(
    const LstmLayerParams& layer, std::span<const double> input,
    const std::vector<double>& h_prev, const std::vector<double>& c_prev) {
  std::vector<double> h, c;
  lstm_cell_forward(layer, input, h_prev, c_prev, h, c);
  return {std::move(h), std::move(c)};
}

/// Backward through one cell step. dh/dc are the incoming gradients at this
/// step's outputs (upper layer + future step already summed by the caller).
/// Parameter gradients accumulate into grad; dh_prev/dc_prev/d_input come
/// back for the recurrence and the layer below.
inline void lstm_cell_backward(const LstmLayerParams& layer, const LstmStepCache& cache,
                               const std::vector<double>& dh, const std::vector<double>& dc_in,
                               LstmLayerParams& grad, std::vector<double>& dh_prev,
                               std::vector<double>& dc_prev, std::vector<double>& d_input) {
  const Index hn = layer.hidden;
  const Index in = layer.input_dim;
  std::array<std::vector<double>, 4> d_pre;  // gradients at gate pre-activations
  for (auto& v : d_pre) v.assign(static_cast<std::size_t>(hn), 0.0);
  dc_prev.assign(static_cast<std::size_t>(hn), 0.0);
  dh_prev.assign(static_cast<std::size_t>(hn), 0.0);
  d_input.assign(static_cast<std::size_t>(in), 0.0);

  for (Index hrow = 0; hrow < hn; ++hrow) {
    const auto idx = static_cast<std::size_t>(hrow);
    // h = o * tanh(c): route dh into the cell and the output gate.
    const double dtc = dh[idx] * cache.o[idx];
    const double dc = dc_in[idx] + dtc * (1.0 - cache.tanh_c[idx] * cache.tanh_c[idx]);
    const double d_o = dh[idx] * cache.tanh_c[idx];
    d_pre[kGateOutput][idx] = d_o * cache.o[idx] * (1.0 - cache.o[idx]);
    d_pre[kGateInput][idx] = dc * cache.g[idx] * cache.i[idx] * (1.0 - cache.i[idx]);
    d_pre[kGateForget][idx] = dc * cache.c_prev[idx] * cache.f[idx] * (1.0 - cache.f[idx]);
    d_pre[kGateCell][idx] = dc * cache.i[idx] * (1.0 - cache.g[idx] * cache.g[idx]);
    dc_prev[idx] = dc * cache.f[idx];
  }

  for (int gi = 0; gi < 4; ++gi) {
    const GateParams& gp = layer.gate[static_cast<std::size_t>(gi)];
    GateParams& gg = grad.gate[static_cast<std::size_t>(gi)];
    const auto& dp = d_pre[static_cast<std::size_t>(gi)];
    for (Index hrow = 0; hrow < hn; ++hrow) {
      const double d = dp[static_cast<std::size_t>(hrow)];
      if (d == 0.0) continue;
      gg.b[static_cast<std::size_t>(hrow)] += d;
      for (Index j = 0; j < in; ++j) {
        gg.w(hrow, j) += d * cache.input[static_cast<std::size_t>(j)];
        d_input[static_cast<std::size_t>(j)] += gp.w(hrow, j) * d;
      }
      for (Index k = 0; k < hn; ++k) {
        gg.u(hrow, k) += d * cache.h_prev[static_cast<std::size_t>(k)];
        dh_prev[static_cast<std::size_t>(k)] += gp.u(hrow, k) * d;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Output head: dense ReLU layer, affine mu, softplus sigma
// ---------------------------------------------------------------------------

struct HeadCache {
  std::vector<double> h;          // head input (top LSTM h)
  std::vector<double> pre_dense;  // dense pre-activations
  std::vector<double> act;        // post-ReLU
  double sigma_pre = 0.0;         // sigma head pre-softplus
};

struct HeadOutput {
  double mu = 0.0;
  double sigma = 0.0;  // softplus(pre) + sigma_floor, always > 0
};

inline HeadOutput head_forward(const ModelParams& p, const std::vector<double>& h,
                               HeadCache* cache = nullptr) {
  const Index dn = p.config.dense;
  const Index hn = p.config.hidden;
  if (static_cast<Index>(h.size()) != hn) throw ConfigError("head_forward: bad hidden size");
  std::vector<double> pre(static_cast<std::size_t>(dn));
  std::vector<double> act(static_cast<std::size_t>(dn));
  for (Index j = 0; j < dn; ++j) {
    double a = p.dense_b[static_cast<std::size_t>(j)];
    for (Index k = 0; k < hn; ++k) a += p.dense_w(j, k) * h[static_cast<std::size_t>(k)];
    pre[static_cast<std::size_t>(j)] = a;
    act[static_cast<std::size_t>(j)] = a > 0.0 ? a : 0.0;
  }
  HeadOutput out;
  double sig_pre = p.sigma_b;
  out.mu = p.mu_b;
  for (Index j = 0; j < dn; ++j) {
    out.mu += p.mu_w[static_cast<std::size_t>(j)] * act[static_cast<std::size_t>(j)];
    sig_pre += p.sigma_w[static_cast<std::size_t>(j)] * act[static_cast<std::size_t>(j)];
  }
  out.sigma = softplus(sig_pre) + p.config.sigma_floor;
  if (cache) {
    cache->h = h;
    cache->pre_dense = std::move(pre);
    cache->act = std::move(act);
    cache->sigma_pre = sig_pre;
  }
  return out;
}

/// Backward from (d mu, d sigma) to the head input. Accumulates into grad,
/// returns dL/dh.
inline std::vector<double> head_backward(const ModelParams& p, const HeadCache& cache,
                                         double d_mu, double d_sigma, GradientBundle& grad) {
  const Index dn = p.config.dense;
  const Index hn = p.config.hidden;
  const double d_sig_pre = d_sigma * sigmoid(cache.sigma_pre);  // softplus' = logistic
  grad.mu_b += d_mu;
  grad.sigma_b += d_sig_pre;
  std::vector<double> d_act(static_cast<std::size_t>(dn));
  for (Index j = 0; j < dn; ++j) {
    const auto idx = static_cast<std::size_t>(j);
    grad.mu_w[idx] += d_mu * cache.act[idx];
    grad.sigma_w[idx] += d_sig_pre * cache.act[idx];
    d_act[idx] = d_mu * p.mu_w[idx] + d_sig_pre * p.sigma_w[idx];
  }
  std::vector<double> dh(static_cast<std::size_t>(hn), 0.0);
  for (Index j = 0; j < dn; ++j) {
    const auto idx = static_cast<std::size_t>(j);
    if (cache.pre_dense[idx] <= 0.0) continue;  // ReLU gate closed
    const double d = d_act[idx];
    grad.dense_b[idx] += d;
    for (Index k = 0; k < hn; ++k) {
      grad.dense_w(j, k) += d * cache.h[static_cast<std::size_t>(k)];
      dh[static_cast<std::size_t>(k)] += p.dense_w(j, k) * d;
    }
  }
  return dh;
}

// ---------------------------------------------------------------------------
// Window loss
// ---------------------------------------------------------------------------

/// One training window, already standardized. inputs row p feeds step p; its
/// column 0 is the scaled previous target (teacher forcing), the rest are
/// covariates. targets hold the ORIGINAL-scale values for the loss steps
/// p in [warmup_steps, length); target_mean/std are the conditioning-range
/// statistics used both for the lag channel and for de-scaling the head.
struct TrainingWindow {
  Matrix inputs;
  std::vector<double> targets;
  Index warmup_steps = 0;
  double target_mean = 0.0;
  double target_std = 1.0;

  Index length() const { return inputs.rows; }

  void validate(const NetConfig& cfg) const {
    if (inputs.rows < 2) throw ConfigError("window: need at least 2 steps");
    if (inputs.cols != cfg.input_dim) {
      std::ostringstream os;
      os << "window: input dim " << inputs.cols << " != model input dim " << cfg.input_dim;
      throw ConfigError(os.str());
    }
    if (warmup_steps < 0 || warmup_steps >= inputs.rows) {
      throw ConfigError("window: warmup_steps must be in [0, length)");
    }
    if (static_cast<Index>(targets.size()) != inputs.rows - warmup_steps) {
      throw ConfigError("window: target count must equal length - warmup_steps");
    }
    if (!(target_std > 0.0)) throw ConfigError("window: target_std must be > 0");
  }
};

struct WindowResult {
  double loss = 0.0;  // summed original-scale NLL over the loss steps
  GradientBundle grads;
};

namespace detail {

struct ForwardTrace {
  double loss = 0.0;
  // caches[p][l]: step p, layer l
  std::vector<std::vector<LstmStepCache>> caches;
  std::vector<HeadCache> head_caches;       // loss steps only, in step order
  std::vector<std::array<double, 2>> d_out;  // (d mu_model, d sigma_model) per loss step
};

/// Teacher-forced forward over the whole window. Loss is accumulated on the
/// original scale: mu = mean + std * mu_model, sigma = std * sigma_model, so
/// the reported NLL differs from the scaled one by ln(std) per step while the
/// gradients pick up a factor std at the head outputs.
inline ForwardTrace forward_window(const ModelParams& p, const TrainingWindow& win,
                                   bool keep_caches) {
  win.validate(p.config);
  const Index steps = win.length();
  const Index layers = p.config.lstm_layers;
  const Index hn = p.config.hidden;

  ForwardTrace trace;
  if (keep_caches) trace.caches.resize(static_cast<std::size_t>(steps));
  std::vector<std::vector<double>> h(static_cast<std::size_t>(layers)),
      c(static_cast<std::size_t>(layers));
  for (Index l = 0; l < layers; ++l) {
    h[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hn), 0.0);
    c[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hn), 0.0);
  }

  for (Index p_step = 0; p_step < steps; ++p_step) {
    if (keep_caches) {
      trace.caches[static_cast<std::size_t>(p_step)].resize(static_cast<std::size_t>(layers));
    }
    std::span<const double> input(
        win.inputs.data.data() + static_cast<std::size_t>(p_step * win.inputs.cols),
        static_cast<std::size_t>(win.inputs.cols));
    std::vector<double> carry;  // h of the layer below
    for (Index l = 0; l < layers; ++l) {
      const auto li = static_cast<std::size_t>(l);
      LstmStepCache* cache =
          keep_caches ? &trace.caches[static_cast<std::size_t>(p_step)][li] : nullptr;
      std::vector<double> h_new, c_new;
      if (l == 0) {
        lstm_cell_forward(p.lstm[li], input, h[li], c[li], h_new, c_new, cache);
      } else {
        lstm_cell_forward(p.lstm[li], std::span<const double>(carry), h[li], c[li], h_new,
                          c_new, cache);
      }
      h[li] = std::move(h_new);
      c[li] = std::move(c_new);
      carry = h[li];
    }

    if (p_step < win.warmup_steps) continue;
    const auto top = static_cast<std::size_t>(layers - 1);
    HeadCache head_cache;
    const HeadOutput out = head_forward(p, h[top], keep_caches ? &head_cache : nullptr);
    const double mu = win.target_mean + win.target_std * out.mu;
    const double sigma = win.target_std * out.sigma;
    const double z = win.targets[static_cast<std::size_t>(p_step - win.warmup_steps)];
    trace.loss += gaussian_nll(z, mu, sigma);
    if (keep_caches) {
      // dNLL/dmu = -(z-mu)/sigma^2, dNLL/dsigma = 1/sigma - (z-mu)^2/sigma^3;
      // chain through the de-scaling (both outputs scale by target_std).
      const double r = z - mu;
      const double d_mu = -r / (sigma * sigma);
      const double d_sigma = 1.0 / sigma - (r * r) / (sigma * sigma * sigma);
      trace.head_caches.push_back(std::move(head_cache));
      trace.d_out.push_back({d_mu * win.target_std, d_sigma * win.target_std});
    }
  }
  return trace;
}

}  // namespace detail

/// Forward-only window NLL (validation, finite-difference oracles).
inline double window_loss(const ModelParams& p, const TrainingWindow& win) {
  return detail::forward_window(p, win, /*keep_caches=*/false).loss;
}

/// Loss plus full-parameter gradients via backpropagation through time.
inline WindowResult window_loss_and_grads(const ModelParams& p, const TrainingWindow& win) {
  detail::ForwardTrace trace = detail::forward_window(p, win, /*keep_caches=*/true);

  WindowResult result;
  result.loss = trace.loss;
  result.grads = zeros_like(p);

  const Index steps = win.length();
  const Index layers = p.config.lstm_layers;
  const Index hn = p.config.hidden;

  // Head gradients first; stash dL/dh_top per loss step.
  std::vector<std::vector<double>> dh_top(static_cast<std::size_t>(steps));
  for (std::size_t li = 0; li < trace.head_caches.size(); ++li) {
    const Index p_step = win.warmup_steps + static_cast<Index>(li);
    dh_top[static_cast<std::size_t>(p_step)] =
        head_backward(p, trace.head_caches[li], trace.d_out[li][0], trace.d_out[li][1],
                      result.grads);
  }

  // BPTT: walk steps backwards; within a step, walk layers top-down so each
  // layer receives its upper neighbour's d_input at the same step plus its own
  // recurrent carries from the step after.
  std::vector<std::vector<double>> dh_next(static_cast<std::size_t>(layers)),
      dc_next(static_cast<std::size_t>(layers));
  for (Index l = 0; l < layers; ++l) {
    dh_next[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hn), 0.0);
    dc_next[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hn), 0.0);
  }
  std::vector<double> dh(static_cast<std::size_t>(hn));
  for (Index p_step = steps - 1; p_step >= 0; --p_step) {
    std::vector<double> carry_down;  // d_input flowing from the layer above
    for (Index l = layers - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      dh.assign(static_cast<std::size_t>(hn), 0.0);
      if (l == layers - 1) {
        const auto& from_head = dh_top[static_cast<std::size_t>(p_step)];
        if (!from_head.empty()) dh = from_head;
      } else {
        dh = carry_down;
      }
      for (Index k = 0; k < hn; ++k) {
        dh[static_cast<std::size_t>(k)] += dh_next[li][static_cast<std::size_t>(k)];
      }
      std::vector<double> dh_prev, dc_prev, d_input;
      lstm_cell_backward(p.lstm[li], trace.caches[static_cast<std::size_t>(p_step)][li], dh,
                         dc_next[li], result.grads.lstm[li], dh_prev, dc_prev, d_input);
      dh_next[li] = std::move(dh_prev);
      dc_next[li] = std::move(dc_prev);
      carry_down = std::move(d_input);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ModelParams m;  // first-moment accumulators, same layout as the params
  ModelParams v;  // second-moment accumulators
  std::int64_t step = 0;
  AdamConfig hyper;

  static AdamState init(const ModelParams& params, const AdamConfig& cfg = {}) {
    AdamState s;
    s.m = zeros_like(params);
    s.v = zeros_like(params);
    s.hyper = cfg;
    return s;
  }
};

namespace detail {

inline std::vector<std::span<double>> param_views(ModelParams& p) {
  std::vector<std::span<double>> views;
  visit_params(p, [&](std::span<double> s) { views.push_back(s); });
  return views;
}

inline std::vector<std::span<const double>> param_views(const ModelParams& p) {
  std::vector<std::span<const double>> views;
  visit_params(p, [&](std::span<const double> s) { views.push_back(s); });
  return views;
}

}  // namespace detail

/// In-place Adam update with bias correction.
inline void adam_step(ModelParams& params, const GradientBundle& grads, AdamState& state) {
  state.step += 1;
  const AdamConfig& hp = state.hyper;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  auto pv = detail::param_views(params);
  auto gv = detail::param_views(grads);
  auto mv = detail::param_views(state.m);
  auto vv = detail::param_views(state.v);
  if (pv.size() != gv.size()) throw ConfigError("adam_step: gradient layout mismatch");
  for (std::size_t a = 0; a < pv.size(); ++a) {
    if (pv[a].size() != gv[a].size()) throw ConfigError("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < pv[a].size(); ++i) {
      const double g = gv[a][i];
      mv[a][i] = hp.beta1 * mv[a][i] + (1.0 - hp.beta1) * g;
      vv[a][i] = hp.beta2 * vv[a][i] + (1.0 - hp.beta2) * g * g;
      const double m_hat = mv[a][i] / bc1;
      const double v_hat = vv[a][i] / bc2;
      pv[a][i] -= hp.learning_rate * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    }
  }
}

/// Plain SGD, selectable through the training config.
inline void sgd_step(ModelParams& params, const GradientBundle& grads, double learning_rate) {
  auto pv = detail::param_views(params);
  auto gv = detail::param_views(grads);
  if (pv.size() != gv.size()) throw ConfigError("sgd_step: gradient layout mismatch");
  for (std::size_t a = 0; a < pv.size(); ++a) {
    if (pv[a].size() != gv[a].size()) throw ConfigError("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < pv[a].size(); ++i) pv[a][i] -= learning_rate * gv[a][i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'B', 'C', 'P', 'N', 'E', 'T', '0', '1'};

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

inline void write_f64(std::ostream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) throw DataError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw DataError("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Binary little-endian checkpoint: magic, dims, sigma_floor, then every
/// parameter array in visit order. Byte-identical for identical params.
inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_u32(out, static_cast<std::uint32_t>(params.config.lstm_layers));
  detail::write_u32(out, static_cast<std::uint32_t>(params.config.input_dim));
  detail::write_u32(out, static_cast<std::uint32_t>(params.config.hidden));
  detail::write_u32(out, static_cast<std::uint32_t>(params.config.dense));
  detail::write_f64(out, params.config.sigma_floor);
  visit_params(params, [&out](std::span<const double> s) {
    for (double v : s) detail::write_f64(out, v);
  });
  if (!out) throw DataError("checkpoint write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[sizeof(detail::kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("not a model checkpoint: " + path);
  }
  NetConfig cfg;
  cfg.lstm_layers = static_cast<Index>(detail::read_u32(in));
  cfg.input_dim = static_cast<Index>(detail::read_u32(in));
  cfg.hidden = static_cast<Index>(detail::read_u32(in));
  cfg.dense = static_cast<Index>(detail::read_u32(in));
  cfg.sigma_floor = detail::read_f64(in);
  ModelParams params = make_params(cfg);
  visit_params(params, [&in](std::span<double> s) {
    for (double& v : s) v = detail::read_f64(in);
  });
  in.peek();
  if (!in.eof()) throw DataError("checkpoint has trailing bytes: " + path);
  return params;
}

}  // namespace batchcp
