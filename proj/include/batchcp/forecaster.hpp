#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "batchcp/changepoint.hpp"
#include "batchcp/core.hpp"
#include "batchcp/nn.hpp"
#include "batchcp/rng.hpp"
#include "batchcp/sampler.hpp"

namespace batchcp {

enum class BatchMode { kVanilla, kBatchCp };

inline const char* batch_mode_label(BatchMode mode) {
  return mode == BatchMode::kVanilla ? "vanilla" : "batchcp";
}

struct OptimizerConfig {
  enum class Kind { kAdam, kSgd };
  Kind kind = Kind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("optimizer: learning rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("optimizer: betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
  }
};

struct TrainConfig {
  Index batch_size = 50;          // s; window length drawn by the sampler
  Index windows_per_epoch = 64;
  Index epochs = 30;
  Index prediction_length = 10;   // loss steps per window
  Index context_length = 40;      // conditioning steps; context + prediction = s
  BatchMode mode = BatchMode::kVanilla;
  /// Drives window rejection in batchcp mode. In vanilla mode sampling
  /// ignores it, but the trainer still counts windows containing these
  /// points, which is how the straddling-window instrumentation works.
  ChangePointSet change_points;
  std::uint64_t seed = 7;
  OptimizerConfig optimizer;
  NetConfig net;                  // input_dim is derived from the data at train time
  Index early_stop_patience = 5;  // epochs without validation improvement
  bool loss_on_full_window = false;  // ablation: score the conditioning range too

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
    if (prediction_length < 1) throw ConfigError("train: prediction_length must be >= 1");
    if (context_length < 1) throw ConfigError("train: context_length must be >= 1");
    if (context_length + prediction_length != batch_size) {
      std::ostringstream os;
      os << "train: context_length (" << context_length << ") + prediction_length ("
         << prediction_length << ") must equal batch_size (" << batch_size << ")";
      throw ConfigError(os.str());
    }
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (windows_per_epoch < 1) throw ConfigError("train: windows_per_epoch must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("train: patience must be >= 1");
    if (mode == BatchMode::kBatchCp) {
      if (const auto s_max = max_batch_size(change_points); s_max && batch_size > *s_max) {
        std::ostringstream os;
        os << "train: batch size " << batch_size << " exceeds the largest admissible size "
           << *s_max << " for the given change points";
        throw ConfigError(os.str());
      }
    }
    optimizer.validate();
    net.validate();
  }
};

struct TrainReport {
  std::vector<double> epoch_train_nll;       // mean per-step NLL per epoch
  std::vector<double> epoch_validation_nll;  // empty when no validation series given
  Index changepoint_windows = 0;  // windows containing a configured change point
  Index total_windows = 0;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string rng_algorithm;
  Index best_epoch = -1;  // epoch whose params were kept; -1 without validation
};

struct TrainOutput {
  ModelParams params;
  TrainReport report;
};

/// Standardizes one sampled window for training. Scaling statistics come from
/// the conditioning range [start, start+context_length) only, so the
/// prediction range never leaks into its own normalization.
inline TrainingWindow build_training_window(const TimeSeries& ts, const WindowSpec& window,
                                            Index context_length,
                                            bool loss_on_full_window = false) {
  make_window(window.start, window.length, ts.length());
  if (context_length < 1 || context_length >= window.length) {
    throw ConfigError("build_training_window: context_length must be in [1, window length)");
  }
  const Index d = ts.covariate_dim();
  TrainingWindow win;
  win.warmup_steps = loss_on_full_window ? 0 : context_length;

  double mean = 0.0;
  for (Index p = 0; p < context_length; ++p) {
    mean += ts.values[static_cast<std::size_t>(window.start + p)];
  }
  mean /= static_cast<double>(context_length);
  double var = 0.0;
  for (Index p = 0; p < context_length; ++p) {
    const double dev = ts.values[static_cast<std::size_t>(window.start + p)] - mean;
    var += dev * dev;
  }
  var /= static_cast<double>(context_length);
  win.target_mean = mean;
  win.target_std = std::max(std::sqrt(var), 1e-8);

  win.inputs = Matrix(window.length, 1 + d);
  for (Index p = 0; p < window.length; ++p) {
    const Index t = window.start + p;
    double lag = 0.0;  // scaled conditioning mean when no previous value exists
    if (t >= 1) {
      lag = (ts.values[static_cast<std::size_t>(t - 1)] - mean) / win.target_std;
    }
    win.inputs(p, 0) = lag;
    for (Index c = 0; c < d; ++c) win.inputs(p, 1 + c) = (*ts.covariates)(t, c);
  }
  win.targets.reserve(static_cast<std::size_t>(window.length - win.warmup_steps));
  for (Index p = win.warmup_steps; p < window.length; ++p) {
    win.targets.push_back(ts.values[static_cast<std::size_t>(window.start + p)]);
  }
  return win;
}

namespace detail {

inline Index covariate_dim_checked(const std::vector<TimeSeries>& series) {
  const Index d = series.front().covariate_dim();
  for (const auto& ts : series) {
    if (ts.covariate_dim() != d) {
      throw ConfigError("train: covariate dimensions differ across series");
    }
  }
  return d;
}

/// Pooled per-step NLL over deterministic rolling windows (stride =
/// prediction length). Used for validation-based early stopping.
inline double holdout_nll(const ModelParams& params, const TimeSeries& ts,
                          const TrainConfig& cfg) {
  const Index s = cfg.batch_size;
  const Index pl = cfg.prediction_length;
  const Index cl = cfg.context_length;
  if (ts.length() < s) {
    std::ostringstream os;
    os << "validation slice of length " << ts.length() << " cannot fit one window of length "
       << s;
    throw ConfigError(os.str());
  }
  double total = 0.0;
  Index steps = 0;
  for (Index origin = cl; origin + pl <= ts.length(); origin += pl) {
    const WindowSpec window{origin - cl, s};
    const TrainingWindow win = build_training_window(ts, window, cl);
    total += window_loss(params, win);
    steps += pl;
  }
  return total / static_cast<double>(steps);
}

}  // namespace detail

/// Trains the network with either batching mode. Windows are drawn through
/// the change-point-aware sampler in both modes (vanilla just hands it an
/// empty set), so the two modes consume identical RNG streams and coincide
/// exactly when no change points are configured.
///
/// When a validation series is given, the per-epoch holdout NLL drives early
/// stopping (stop after early_stop_patience epochs without improvement) and
/// the best-epoch parameters are returned instead of the last.
inline TrainOutput train(const std::vector<TimeSeries>& series, const TrainConfig& cfg,
                         const TimeSeries* validation = nullptr) {
  cfg.validate();
  if (series.empty()) throw ConfigError("train: need at least one series");
  for (const auto& ts : series) {
    require_valid(ts);
    if (ts.length() <= cfg.batch_size + 1) {
      std::ostringstream os;
      os << "train: series" << (ts.name.empty() ? "" : " '" + ts.name + "'")
         << " of length " << ts.length() << " must be longer than batch_size + 1 = "
         << cfg.batch_size + 1;
      throw ConfigError(os.str());
    }
  }
  const Index d = detail::covariate_dim_checked(series);
  NetConfig net = cfg.net;
  net.input_dim = 1 + d;
  net.validate();

  const ChangePointSet sampler_cps =
      cfg.mode == BatchMode::kBatchCp ? cfg.change_points : ChangePointSet{};
  std::vector<SamplerConfig> sampler_cfgs;
  for (const auto& ts : series) {
    // Construction validates feasibility bounds; an impossible layout fails
    // here, before any training work.
    sampler_cfgs.emplace_back(cfg.batch_size, sampler_cps, ts.length());
    if (count_valid_starts(ts.length(), cfg.batch_size, sampler_cps) == 0) {
      std::ostringstream os;
      os << "train: no valid window of length " << cfg.batch_size << " in series"
         << (ts.name.empty() ? "" : " '" + ts.name + "'") << "; blocking change points:";
      for (Index c : sampler_cps.indices()) os << " " << c;
      throw InfeasibleSamplerError(os.str(), sampler_cps.indices());
    }
  }

  const auto start_time = std::chrono::steady_clock::now();
  const Rng root(cfg.seed);
  Rng init_rng = root.split(1);
  const Rng sampler_root = root.split(2);
  std::vector<Rng> sampler_rngs;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sampler_rngs.push_back(sampler_root.split(static_cast<std::uint64_t>(i)));
  }

  ModelParams params = init_params(net, init_rng);
  AdamState adam = AdamState::init(
      params, AdamConfig{cfg.optimizer.learning_rate, cfg.optimizer.beta1,
                         cfg.optimizer.beta2, cfg.optimizer.epsilon});

  TrainReport report;
  report.seed = cfg.seed;
  report.rng_algorithm = Rng::kAlgorithmId;

  ModelParams best_params = params;
  double best_nll = std::numeric_limits<double>::infinity();
  Index epochs_since_best = 0;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (Index w = 0; w < cfg.windows_per_epoch; ++w) {
      const std::size_t si = static_cast<std::size_t>(w) % series.size();
      const WindowSpec window = sample_valid_batch(sampler_cfgs[si], sampler_rngs[si]);
      if (cfg.change_points.any_in(window.start, window.end())) {
        ++report.changepoint_windows;
      }
      const TrainingWindow win = build_training_window(series[si], window,
                                                       cfg.context_length,
                                                       cfg.loss_on_full_window);
      WindowResult result = window_loss_and_grads(params, win);
      if (!std::isfinite(result.loss)) {
        std::ostringstream os;
        os << "train: non-finite loss at epoch " << epoch << ", window " << w
           << " (series start " << window.start << ")";
        throw NumericError(os.str());
      }
      if (cfg.optimizer.kind == OptimizerConfig::Kind::kAdam) {
        adam_step(params, result.grads, adam);
      } else {
        sgd_step(params, result.grads, cfg.optimizer.learning_rate);
      }
      epoch_loss += result.loss / static_cast<double>(win.targets.size());
      ++report.total_windows;
    }
    report.epoch_train_nll.push_back(epoch_loss / static_cast<double>(cfg.windows_per_epoch));

    if (validation) {
      const double v = detail::holdout_nll(params, *validation, cfg);
      report.epoch_validation_nll.push_back(v);
      if (v < best_nll) {
        best_nll = v;
        best_params = params;
        report.best_epoch = epoch;
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
        if (epochs_since_best >= cfg.early_stop_patience) break;
      }
    }
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return TrainOutput{validation ? std::move(best_params) : std::move(params),
                     std::move(report)};
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

namespace detail {

struct RnnState {
  std::vector<std::vector<double>> h, c;

  static RnnState zeros(const NetConfig& cfg) {
    RnnState s;
    s.h.assign(static_cast<std::size_t>(cfg.lstm_layers),
               std::vector<double>(static_cast<std::size_t>(cfg.hidden), 0.0));
    s.c = s.h;
    return s;
  }
};

/// Advances every layer one step; returns the top layer's hidden state.
inline const std::vector<double>& advance(const ModelParams& params, RnnState& state,
                                          std::span<const double> input) {
  std::vector<double> h_new, c_new;
  for (std::size_t l = 0; l < params.lstm.size(); ++l) {
    if (l == 0) {
      lstm_cell_forward(params.lstm[l], input, state.h[l], state.c[l], h_new, c_new);
    } else {
      lstm_cell_forward(params.lstm[l], std::span<const double>(state.h[l - 1]), state.h[l],
                        state.c[l], h_new, c_new);
    }
    state.h[l] = std::move(h_new);
    state.c[l] = std::move(c_new);
  }
  return state.h.back();
}

struct PredictSetup {
  RnnState post_context;  // state after teacher-forcing the whole context
  double mean = 0.0;
  double std = 1.0;
  double last_scaled = 0.0;  // scaled final context value, first feedback lag
  Index cov_dim = 0;
};

inline PredictSetup run_context(const ModelParams& params, const TimeSeries& context,
                                Index horizon, const Matrix* future_covariates) {
  require_valid(context);
  if (horizon < 1) throw ConfigError("predict: horizon must be >= 1");
  const Index d = params.config.input_dim - 1;
  if (context.covariate_dim() != d) {
    std::ostringstream os;
    os << "predict: model expects " << d << " covariates, context has "
       << context.covariate_dim();
    throw ConfigError(os.str());
  }
  if (d > 0) {
    if (!future_covariates) {
      throw ConfigError("predict: model uses covariates; future covariate rows are required");
    }
    if (future_covariates->rows != horizon || future_covariates->cols != d) {
      std::ostringstream os;
      os << "predict: future covariates must be " << horizon << "x" << d << ", got "
         << future_covariates->rows << "x" << future_covariates->cols;
      throw ConfigError(os.str());
    }
  }

  PredictSetup setup;
  setup.cov_dim = d;
  const Index len = context.length();
  double mean = 0.0;
  for (double v : context.values) mean += v;
  mean /= static_cast<double>(len);
  double var = 0.0;
  for (double v : context.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(len);
  setup.mean = mean;
  setup.std = std::max(std::sqrt(var), 1e-8);

  setup.post_context = RnnState::zeros(params.config);
  std::vector<double> input(static_cast<std::size_t>(params.config.input_dim), 0.0);
  for (Index p = 0; p < len; ++p) {
    input[0] = p == 0 ? 0.0
                      : (context.values[static_cast<std::size_t>(p - 1)] - mean) / setup.std;
    for (Index c = 0; c < d; ++c) {
      input[static_cast<std::size_t>(1 + c)] = (*context.covariates)(p, c);
    }
    advance(params, setup.post_context, input);
  }
  setup.last_scaled = (context.values.back() - mean) / setup.std;
  return setup;
}

}  // namespace detail

/// Deterministic mean path: feed the predictive mean back as the next lag.
/// This is the curve RMSE evaluation scores; it involves no sampling.
inline std::vector<double> predict_mean(const ModelParams& params, const TimeSeries& context,
                                        Index horizon,
                                        const Matrix* future_covariates = nullptr) {
  const detail::PredictSetup setup =
      detail::run_context(params, context, horizon, future_covariates);
  detail::RnnState state = setup.post_context;
  std::vector<double> input(static_cast<std::size_t>(params.config.input_dim), 0.0);
  std::vector<double> mu(static_cast<std::size_t>(horizon));
  double lag = setup.last_scaled;
  for (Index q = 0; q < horizon; ++q) {
    input[0] = lag;
    for (Index c = 0; c < setup.cov_dim; ++c) {
      input[static_cast<std::size_t>(1 + c)] = (*future_covariates)(q, c);
    }
    const HeadOutput out = head_forward(params, detail::advance(params, state, input));
    mu[static_cast<std::size_t>(q)] = setup.mean + setup.std * out.mu;
    lag = out.mu;
  }
  return mu;
}

/// Ancestral-sampling forecast: mu/sigma describe the mean path; each trace
/// row feeds its own sampled values back, so the rows jointly represent the
/// predictive distribution over the horizon.
inline GaussianForecast predict(const ModelParams& params, const TimeSeries& context,
                                Index horizon, Index num_samples, Rng& rng,
                                const Matrix* future_covariates = nullptr) {
  if (num_samples < 1) throw ConfigError("predict: num_samples must be >= 1");
  const detail::PredictSetup setup =
      detail::run_context(params, context, horizon, future_covariates);

  GaussianForecast forecast;
  forecast.mu.resize(static_cast<std::size_t>(horizon));
  forecast.sigma.resize(static_cast<std::size_t>(horizon));
  forecast.traces = Matrix(num_samples, horizon);

  std::vector<double> input(static_cast<std::size_t>(params.config.input_dim), 0.0);
  {
    detail::RnnState state = setup.post_context;
    double lag = setup.last_scaled;
    for (Index q = 0; q < horizon; ++q) {
      input[0] = lag;
      for (Index c = 0; c < setup.cov_dim; ++c) {
        input[static_cast<std::size_t>(1 + c)] = (*future_covariates)(q, c);
      }
      const HeadOutput out = head_forward(params, detail::advance(params, state, input));
      forecast.mu[static_cast<std::size_t>(q)] = setup.mean + setup.std * out.mu;
      forecast.sigma[static_cast<std::size_t>(q)] = setup.std * out.sigma;
      lag = out.mu;
    }
  }
  for (Index i = 0; i < num_samples; ++i) {
    detail::RnnState state = setup.post_context;
    double lag = setup.last_scaled;
    for (Index q = 0; q < horizon; ++q) {
      input[0] = lag;
      for (Index c = 0; c < setup.cov_dim; ++c) {
        input[static_cast<std::size_t>(1 + c)] = (*future_covariates)(q, c);
      }
      const HeadOutput out = head_forward(params, detail::advance(params, state, input));
      const double z_scaled = out.mu + out.sigma * rng.next_gaussian();
      forecast.traces(i, q) = setup.mean + setup.std * z_scaled;
      lag = z_scaled;
    }
  }
  return forecast;
}

/// Last-value baseline: repeats the final observed value across the horizon.
inline std::vector<double> naive_forecast(const TimeSeries& context, Index horizon) {
  if (context.values.empty()) throw ConfigError("naive_forecast: empty context");
  if (horizon < 0) throw ConfigError("naive_forecast: horizon must be >= 0");
  return std::vector<double>(static_cast<std::size_t>(horizon), context.values.back());
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainReport& report) {
  return nlohmann::json{{"version", 1},
                        {"epoch_train_nll", report.epoch_train_nll},
                        {"epoch_validation_nll", report.epoch_validation_nll},
                        {"changepoint_windows", report.changepoint_windows},
                        {"total_windows", report.total_windows},
                        {"wall_clock_seconds", report.wall_clock_seconds},
                        {"seed", report.seed},
                        {"rng_algorithm", report.rng_algorithm},
                        {"best_epoch", report.best_epoch}};
}

inline TrainReport train_report_from_json(const nlohmann::json& j) {
  TrainReport report;
  try {
    report.epoch_train_nll = j.at("epoch_train_nll").get<std::vector<double>>();
    report.epoch_validation_nll = j.at("epoch_validation_nll").get<std::vector<double>>();
    report.changepoint_windows = j.at("changepoint_windows").get<Index>();
    report.total_windows = j.at("total_windows").get<Index>();
    report.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.rng_algorithm = j.at("rng_algorithm").get<std::string>();
    report.best_epoch = j.at("best_epoch").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train report json: ") + e.what());
  }
  return report;
}

inline void write_train_report(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << to_json(report).dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline TrainReport read_train_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return train_report_from_json(j);
}

}  // namespace batchcp
