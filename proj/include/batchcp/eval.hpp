#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "batchcp/changepoint.hpp"
#include "batchcp/core.hpp"
#include "batchcp/data.hpp"
#include "batchcp/forecaster.hpp"

namespace batchcp {

inline double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.empty()) throw ConfigError("rmse: empty input");
  if (predicted.size() != actual.size()) {
    std::ostringstream os;
    os << "rmse: length mismatch (" << predicted.size() << " vs " << actual.size() << ")";
    throw ConfigError(os.str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - actual[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(predicted.size()));
}

struct SplitSlices {
  TimeSeries train;
  TimeSeries validation;
  TimeSeries test;
};

/// Contiguous chronological split with sizes floor(0.6n), floor(0.2n) and the
/// remainder; covariates and timestamps are sliced in lockstep.
inline SplitSlices split_60_20_20(const TimeSeries& ts) {
  const Index n = ts.length();
  if (n < 5) throw ConfigError("split_60_20_20: need at least 5 points");
  const Index train_n = (3 * n) / 5;
  const Index val_n = n / 5;
  return SplitSlices{slice(ts, 0, train_n), slice(ts, train_n, val_n),
                     slice(ts, train_n + val_n, n - train_n - val_n)};
}

enum class Scenario { kNaive, kVanilla, kBatchCpManual, kBatchCpMosum };

inline const char* scenario_label(Scenario s) {
  switch (s) {
    case Scenario::kNaive: return "I naive";
    case Scenario::kVanilla: return "II vanilla";
    case Scenario::kBatchCpManual: return "III batchcp-manual";
    case Scenario::kBatchCpMosum: return "IV batchcp-mosum";
  }
  throw ConfigError("unknown scenario");
}

struct ScenarioConfig {
  TrainConfig train;
  MosumConfig mosum;                   // scenario IV detector settings
  ChangePointSet manual_change_points; // ground truth; scenario III's input
  /// True when the batch size was requested explicitly: an infeasible size
  /// then raises ConfigError naming s_max instead of being clamped.
  bool explicit_batch_size = false;
  Index eval_stride = 0;  // rolling-origin stride; 0 means prediction_length
};

struct ScenarioReport {
  Scenario scenario = Scenario::kNaive;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::uint64_t seed = 0;
  std::vector<Index> change_points_used;  // drove the sampler (III manual, IV detected)
  Index effective_batch_size = 0;
  Index effective_context_length = 0;
  Index effective_prediction_length = 0;
  nlohmann::json config_snapshot;
  TrainReport train_report;  // zero-valued for scenario I
};

namespace detail {

struct RollingSetup {
  Index context_length = 0;
  Index prediction_length = 0;
  Index stride = 0;
};

/// Rolling-origin evaluation: slide the forecast origin across the slice,
/// predict prediction_length steps from a fixed-length context, pool every
/// squared error into one RMSE. `model` null selects the naive baseline.
inline double rolling_rmse(const ModelParams* model, const TimeSeries& ts,
                           const RollingSetup& setup) {
  const Index cl = setup.context_length;
  const Index pl = setup.prediction_length;
  if (ts.length() < cl + pl) {
    std::ostringstream os;
    os << "rolling evaluation: slice of length " << ts.length() << " cannot fit context "
       << cl << " + horizon " << pl;
    throw ConfigError(os.str());
  }
  double acc = 0.0;
  Index count = 0;
  for (Index origin = cl; origin + pl <= ts.length(); origin += setup.stride) {
    std::vector<double> predicted;
    if (model) {
      const TimeSeries context = slice(ts, origin - cl, cl);
      if (ts.covariate_dim() > 0) {
        Matrix future(pl, ts.covariate_dim());
        for (Index q = 0; q < pl; ++q) {
          for (Index c = 0; c < future.cols; ++c) future(q, c) = (*ts.covariates)(origin + q, c);
        }
        predicted = predict_mean(*model, context, pl, &future);
      } else {
        predicted = predict_mean(*model, context, pl);
      }
    } else {
      predicted.assign(static_cast<std::size_t>(pl),
                       ts.values[static_cast<std::size_t>(origin - 1)]);
    }
    for (Index q = 0; q < pl; ++q) {
      const double d = predicted[static_cast<std::size_t>(q)] -
                       ts.values[static_cast<std::size_t>(origin + q)];
      acc += d * d;
      ++count;
    }
  }
  return std::sqrt(acc / static_cast<double>(count));
}

inline std::vector<Index> filter_below(const ChangePointSet& cps, Index limit) {
  std::vector<Index> kept;
  for (Index c : cps.indices()) {
    if (c < limit) kept.push_back(c);
  }
  return kept;
}

}  // namespace detail

/// Runs one of the four scenarios on a 60/20/20 split of the series:
///   I    last-value baseline, no training;
///   II   vanilla batching (windows may straddle change points);
///   III  batchcp with the manual change-point list;
///   IV   batchcp with change points MOSUM-detects on the train slice only.
/// Train and test RMSE are rolling-origin over the respective slices; the
/// validation slice drives early stopping in the trained scenarios.
///
/// When the batch size was not requested explicitly, III and IV clamp it to
/// the largest admissible size for their change points and rescale the
/// context/prediction split by the default rule (prediction = max(1, s/5)).
inline ScenarioReport run_scenario(Scenario scenario, const TimeSeries& series,
                                   const ScenarioConfig& cfg) {
  require_valid(series);
  const SplitSlices parts = split_60_20_20(series);
  const Index train_len = parts.train.length();

  ScenarioReport report;
  report.scenario = scenario;
  report.seed = cfg.train.seed;

  // Ground truth restricted to the train slice; instrumentation for II,
  // sampler input for III.
  const std::vector<Index> truth_in_train =
      detail::filter_below(cfg.manual_change_points, train_len);

  TrainConfig tc = cfg.train;
  switch (scenario) {
    case Scenario::kNaive:
      break;
    case Scenario::kVanilla:
      tc.mode = BatchMode::kVanilla;
      tc.change_points = ChangePointSet(truth_in_train);
      break;
    case Scenario::kBatchCpManual:
      tc.mode = BatchMode::kBatchCp;
      tc.change_points = ChangePointSet(truth_in_train);
      report.change_points_used = truth_in_train;
      break;
    case Scenario::kBatchCpMosum: {
      tc.mode = BatchMode::kBatchCp;
      const MosumResult detection = detect_change_points(parts.train, cfg.mosum);
      tc.change_points = detection.change_points;
      report.change_points_used = detection.change_points.indices();
      break;
    }
  }

  if (tc.mode == BatchMode::kBatchCp && scenario != Scenario::kNaive) {
    if (const auto s_max = max_batch_size(tc.change_points);
        s_max && tc.batch_size > *s_max) {
      if (cfg.explicit_batch_size) {
        std::ostringstream os;
        os << scenario_label(scenario) << ": batch size " << tc.batch_size
           << " exceeds the largest admissible size " << *s_max
           << " for the change points in use";
        throw ConfigError(os.str());
      }
      tc.batch_size = *s_max;
      tc.prediction_length = std::max<Index>(1, tc.batch_size / 5);
      tc.context_length = tc.batch_size - tc.prediction_length;
    }
  }

  report.effective_batch_size = tc.batch_size;
  report.effective_context_length = tc.context_length;
  report.effective_prediction_length = tc.prediction_length;
  report.config_snapshot = nlohmann::json{
      {"batch_size", tc.batch_size},
      {"context_length", tc.context_length},
      {"prediction_length", tc.prediction_length},
      {"windows_per_epoch", tc.windows_per_epoch},
      {"epochs", tc.epochs},
      {"mode", scenario == Scenario::kNaive ? "none" : batch_mode_label(tc.mode)},
      {"learning_rate", tc.optimizer.learning_rate},
      {"optimizer", tc.optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd"},
      {"early_stop_patience", tc.early_stop_patience},
      {"eval_stride", cfg.eval_stride == 0 ? tc.prediction_length : cfg.eval_stride},
      {"mosum_bandwidth", cfg.mosum.bandwidth},
      {"mosum_eta", cfg.mosum.eta},
      {"mosum_threshold_scale", cfg.mosum.threshold_scale},
  };

  const detail::RollingSetup rolling{tc.context_length, tc.prediction_length,
                                     cfg.eval_stride == 0 ? tc.prediction_length
                                                          : cfg.eval_stride};
  if (scenario == Scenario::kNaive) {
    report.train_rmse = detail::rolling_rmse(nullptr, parts.train, rolling);
    report.test_rmse = detail::rolling_rmse(nullptr, parts.test, rolling);
  } else {
    TrainOutput trained = train({parts.train}, tc, &parts.validation);
    report.train_report = std::move(trained.report);
    report.train_rmse = detail::rolling_rmse(&trained.params, parts.train, rolling);
    report.test_rmse = detail::rolling_rmse(&trained.params, parts.test, rolling);
  }
  if (!std::isfinite(report.train_rmse) || !std::isfinite(report.test_rmse) ||
      report.train_rmse < 0.0 || report.test_rmse < 0.0) {
    throw NumericError(std::string(scenario_label(scenario)) +
                       ": rolling RMSE is not finite and non-negative");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report and table serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ScenarioReport& report) {
  return nlohmann::json{{"version", 1},
                        {"scenario", scenario_label(report.scenario)},
                        {"train_rmse", report.train_rmse},
                        {"test_rmse", report.test_rmse},
                        {"seed", report.seed},
                        {"change_points_used", report.change_points_used},
                        {"effective_batch_size", report.effective_batch_size},
                        {"effective_context_length", report.effective_context_length},
                        {"effective_prediction_length", report.effective_prediction_length},
                        {"config", report.config_snapshot},
                        {"train_report", to_json(report.train_report)}};
}

inline void write_scenario_report(const ScenarioReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << to_json(report).dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

/// Markdown comparison table in the scenario / train RMSE / test RMSE layout.
inline void write_comparison_markdown(const std::vector<ScenarioReport>& reports,
                                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "| scenario | train RMSE | test RMSE | batch size | change points used |\n";
  out << "|---|---:|---:|---:|---:|\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : reports) {
    out << "| " << scenario_label(r.scenario) << " | " << r.train_rmse << " | " << r.test_rmse
        << " | " << r.effective_batch_size << " | " << r.change_points_used.size() << " |\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

inline void write_comparison_csv(const std::vector<ScenarioReport>& reports,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "scenario,train_rmse,test_rmse,batch_size,change_points_used\n";
  out << std::setprecision(17);
  for (const auto& r : reports) {
    out << scenario_label(r.scenario) << "," << r.train_rmse << "," << r.test_rmse << ","
        << r.effective_batch_size << "," << r.change_points_used.size() << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace batchcp
