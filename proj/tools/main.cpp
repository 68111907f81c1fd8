// batchcp: change-point-aware forecasting toolkit.
//
// Subcommands: synth, detect, train, predict, compare. Exit codes are a
// stable contract: 0 success, 1 usage/configuration error, 2 data error,
// 3 numeric failure. All randomness flows from --seed through one root
// stream: split(1) initializes weights, split(2) drives the window sampler
// (split per series), split(3) drives prediction sampling. Reruns with
// identical flags therefore produce byte-identical data outputs; report
// files additionally embed wall-clock timings.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "batchcp/changepoint.hpp"
#include "batchcp/core.hpp"
#include "batchcp/data.hpp"
#include "batchcp/eval.hpp"
#include "batchcp/forecaster.hpp"
#include "batchcp/nn.hpp"
#include "batchcp/rng.hpp"
#include "batchcp/sampler.hpp"

namespace {

using namespace batchcp;

constexpr std::uint64_t kDefaultSeed = 7;

std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct SchemaOptions {
  std::string target = "y";
  std::vector<std::string> covariates;
  std::string timestamp;
  std::string delimiter = ",";
  bool no_header = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--target", target, "Target column name (or index without a header)")
        ->capture_default_str();
    cmd->add_option("--covariates", covariates,
                    "Covariate column names, comma separated or repeated")
        ->delimiter(',');
    cmd->add_option("--timestamp-column", timestamp, "Timestamp column name (optional)");
    cmd->add_option("--delimiter", delimiter, "Field delimiter")->capture_default_str();
    cmd->add_flag("--no-header", no_header, "Input has no header row; reference columns by index");
  }

  CsvSchema schema() const {
    if (delimiter.size() != 1) {
      throw ConfigError("--delimiter must be a single character, got '" + delimiter + "'");
    }
    CsvSchema s;
    s.target = target;
    s.covariates = covariates;
    if (!timestamp.empty()) s.timestamp = timestamp;
    s.delimiter = delimiter[0];
    s.has_header = !no_header;
    return s;
  }
};

struct MosumOptions {
  double bandwidth = 0.2;
  double eta = 0.1;
  double alpha = 0.05;
  double threshold_scale = 1.3;
  double threshold = 0.0;
  CLI::Option* threshold_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--bandwidth", bandwidth,
                    "Window G: fraction of n in (0, 0.5] or an absolute size >= 1")
        ->capture_default_str();
    cmd->add_option("--eta", eta, "Local-maximum neighbourhood as a fraction of G")
        ->capture_default_str();
    cmd->add_option("--alpha", alpha, "Significance level (reserved; threshold-scale governs)")
        ->capture_default_str();
    cmd->add_option("--threshold-scale", threshold_scale,
                    "Multiplier on the sqrt(2 ln(n/G)) reference threshold")
        ->capture_default_str();
    threshold_opt =
        cmd->add_option("--threshold", threshold, "Absolute detection threshold override");
  }

  MosumConfig config() const {
    MosumConfig cfg;
    cfg.bandwidth = bandwidth;
    cfg.eta = eta;
    cfg.alpha = alpha;
    cfg.threshold_scale = threshold_scale;
    if (threshold_opt && threshold_opt->count() > 0) cfg.absolute_threshold = threshold;
    return cfg;
  }
};

struct TrainOptions {
  Index batch_size = 50;
  Index prediction_length = 10;
  Index context_length = 40;
  Index epochs = 30;
  Index windows_per_epoch = 64;
  std::string mode = "vanilla";
  std::string changepoints_path;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";
  Index patience = 5;
  Index hidden_units = 4;
  Index dense_units = 3;
  Index lstm_layers = 1;
  double sigma_floor = 1e-6;
  bool loss_on_full_window = false;
  CLI::Option* batch_size_opt = nullptr;

  void attach(CLI::App* cmd) {
    batch_size_opt = cmd->add_option("--batch-size", batch_size,
                                     "Training window length s (context + prediction)")
                         ->capture_default_str();
    cmd->add_option("--prediction-length", prediction_length, "Loss steps per window")
        ->capture_default_str();
    cmd->add_option("--context-length", context_length, "Conditioning steps per window")
        ->capture_default_str();
    cmd->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--windows-per-epoch", windows_per_epoch, "Windows drawn per epoch")
        ->capture_default_str();
    cmd->add_option("--mode", mode, "Window sampling mode")
        ->check(CLI::IsMember({"vanilla", "batchcp"}))
        ->capture_default_str();
    cmd->add_option("--changepoints", changepoints_path,
                    "Change-point file (one index per line)");
    cmd->add_option("--learning-rate", learning_rate, "Optimizer learning rate")
        ->capture_default_str();
    cmd->add_option("--optimizer", optimizer, "Optimizer")
        ->check(CLI::IsMember({"adam", "sgd"}))
        ->capture_default_str();
    cmd->add_option("--patience", patience, "Early-stop patience in epochs (with validation)")
        ->capture_default_str();
    cmd->add_option("--hidden-units", hidden_units, "LSTM hidden units")->capture_default_str();
    cmd->add_option("--dense-units", dense_units, "Dense layer width")->capture_default_str();
    cmd->add_option("--lstm-layers", lstm_layers, "Stacked LSTM layers")->capture_default_str();
    cmd->add_option("--sigma-floor", sigma_floor, "Lower bound added to the model sigma")
        ->capture_default_str();
    cmd->add_flag("--loss-on-full-window", loss_on_full_window,
                  "Score the conditioning range too (ablation)");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.batch_size = batch_size;
    cfg.prediction_length = prediction_length;
    cfg.context_length = context_length;
    cfg.epochs = epochs;
    cfg.windows_per_epoch = windows_per_epoch;
    cfg.mode = mode == "batchcp" ? BatchMode::kBatchCp : BatchMode::kVanilla;
    if (!changepoints_path.empty()) {
      cfg.change_points = read_change_points(changepoints_path);
    }
    cfg.seed = seed;
    cfg.optimizer.kind = optimizer == "sgd" ? OptimizerConfig::Kind::kSgd
                                            : OptimizerConfig::Kind::kAdam;
    cfg.optimizer.learning_rate = learning_rate;
    cfg.early_stop_patience = patience;
    cfg.net.hidden = hidden_units;
    cfg.net.dense = dense_units;
    cfg.net.lstm_layers = lstm_layers;
    cfg.net.sigma_floor = sigma_floor;
    cfg.loss_on_full_window = loss_on_full_window;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string preset = "level-shift";
  std::string spec_path;
  std::uint64_t seed = kDefaultSeed;
  std::string out_csv = "synthetic.csv";
  std::string out_changepoints = "changepoints.txt";
  CLI::Option* seed_opt = nullptr;
};

int cmd_synth(const SynthArgs& args) {
  SyntheticData data;
  if (!args.spec_path.empty()) {
    SyntheticSpec spec = read_synthetic_spec(args.spec_path);
    if (args.seed_opt->count() > 0) spec.seed = args.seed;
    data = generate_synthetic(spec);
  } else if (args.preset == "level-shift") {
    SyntheticSpec spec;
    if (args.seed_opt->count() > 0) spec.seed = args.seed;
    data = generate_synthetic(spec);
  } else if (args.preset == "reset-walk") {
    WalkSpec spec;
    if (args.seed_opt->count() > 0) spec.seed = args.seed;
    data = generate_reset_walk(spec);
  } else {
    throw ConfigError("unknown preset '" + args.preset +
                      "' (available: level-shift, reset-walk)");
  }

  data.series.timestamps = std::vector<double>();
  for (Index t = 0; t < data.series.length(); ++t) {
    data.series.timestamps->push_back(static_cast<double>(t));
  }
  CsvSchema schema;
  schema.timestamp = "t";
  save_csv(args.out_csv, data.series, schema);
  write_change_points(args.out_changepoints, data.change_points);
  std::cout << "wrote " << args.out_csv << " (" << data.series.length() << " rows) and "
            << args.out_changepoints << " (" << data.change_points.size()
            << " change points)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectArgs {
  std::string input;
  SchemaOptions schema;
  MosumOptions mosum;
  std::string out_changepoints = "changepoints.txt";
  std::string out_statistic = "mosum_statistic.csv";
};

int cmd_detect(const DetectArgs& args) {
  const TimeSeries ts = load_csv(args.input, args.schema.schema());
  const MosumResult result = detect_change_points(ts, args.mosum.config());

  write_change_points(args.out_changepoints, result.change_points);
  std::ofstream stat(args.out_statistic);
  if (!stat) throw DataError("cannot open for writing: " + args.out_statistic);
  stat << "k,statistic\n";
  for (std::size_t i = 0; i < result.statistic.size(); ++i) {
    stat << (result.first_k + static_cast<Index>(i)) << "," << fmt_double(result.statistic[i])
         << "\n";
  }
  if (!stat) throw DataError("write failed: " + args.out_statistic);

  std::cout << "n=" << ts.length() << " G=" << result.bandwidth
            << " sigma_hat=" << fmt_double(result.sigma_hat)
            << " threshold=" << fmt_double(result.threshold) << "\n";
  std::cout << "detected " << result.change_points.size() << " change points -> "
            << args.out_changepoints << "\n";
  for (Index c : result.change_points.indices()) std::cout << "  " << c << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> inputs;
  SchemaOptions schema;
  TrainOptions train;
  std::uint64_t seed = kDefaultSeed;
  std::string out_checkpoint = "model.ckpt";
  std::string out_report = "train_report.json";
};

int cmd_train(const TrainArgs& args) {
  std::vector<TimeSeries> series;
  for (const auto& path : args.inputs) {
    series.push_back(load_csv(path, args.schema.schema()));
  }
  const TrainConfig cfg = args.train.config(args.seed);
  // The train subcommand fits on the full input; the compare subcommand is
  // the one that holds out validation/test slices.
  const TrainOutput out = train(series, cfg);
  save_checkpoint(out.params, args.out_checkpoint);
  write_train_report(out.report, args.out_report);
  std::cout << "trained " << out.report.total_windows << " windows over "
            << out.report.epoch_train_nll.size() << " epochs";
  if (!out.report.epoch_train_nll.empty()) {
    std::cout << "; first NLL " << fmt_double(out.report.epoch_train_nll.front())
              << ", final NLL " << fmt_double(out.report.epoch_train_nll.back());
  }
  std::cout << "\nchange-point windows: " << out.report.changepoint_windows << "\n";
  std::cout << "wrote " << args.out_checkpoint << " and " << args.out_report << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string input;
  std::string checkpoint;
  SchemaOptions schema;
  Index horizon = 10;
  Index num_samples = 100;
  std::uint64_t seed = kDefaultSeed;
  std::string future_covariates;
  std::string out_forecast = "forecast.csv";
  std::string out_traces;
};

int cmd_predict(const PredictArgs& args) {
  const TimeSeries context = load_csv(args.input, args.schema.schema());
  const ModelParams params = load_checkpoint(args.checkpoint);

  std::optional<Matrix> future;
  if (!args.future_covariates.empty()) {
    // Same schema as the context file; only the covariate columns are used,
    // so the target column may be zero-filled.
    const TimeSeries f = load_csv(args.future_covariates, args.schema.schema());
    if (!f.covariates) {
      throw ConfigError("future covariates file has no covariate columns; pass --covariates");
    }
    future = *f.covariates;
  }

  Rng prediction_rng = Rng(args.seed).split(3);
  const GaussianForecast forecast =
      predict(params, context, args.horizon, args.num_samples, prediction_rng,
              future ? &*future : nullptr);

  std::ofstream out(args.out_forecast);
  if (!out) throw DataError("cannot open for writing: " + args.out_forecast);
  out << "step,mu,sigma\n";
  for (Index q = 0; q < args.horizon; ++q) {
    out << q << "," << fmt_double(forecast.mu[static_cast<std::size_t>(q)]) << ","
        << fmt_double(forecast.sigma[static_cast<std::size_t>(q)]) << "\n";
  }
  if (!out) throw DataError("write failed: " + args.out_forecast);
  std::cout << "wrote " << args.out_forecast << " (horizon " << args.horizon << ", "
            << args.num_samples << " samples)\n";

  if (!args.out_traces.empty()) {
    std::ofstream traces(args.out_traces);
    if (!traces) throw DataError("cannot open for writing: " + args.out_traces);
    traces << "trace,step,value\n";
    for (Index i = 0; i < forecast.traces.rows; ++i) {
      for (Index q = 0; q < forecast.traces.cols; ++q) {
        traces << i << "," << q << "," << fmt_double(forecast.traces(i, q)) << "\n";
      }
    }
    if (!traces) throw DataError("write failed: " + args.out_traces);
    std::cout << "wrote " << args.out_traces << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string input;
  SchemaOptions schema;
  TrainOptions train;
  MosumOptions mosum;
  std::uint64_t seed = kDefaultSeed;
  Index stride = 0;
  std::string out_dir = ".";
};

int cmd_compare(const CompareArgs& args) {
  const TimeSeries ts = load_csv(args.input, args.schema.schema());
  std::filesystem::create_directories(args.out_dir);

  ScenarioConfig cfg;
  cfg.train = args.train.config(args.seed);
  cfg.mosum = args.mosum.config();
  cfg.manual_change_points = cfg.train.change_points;
  cfg.explicit_batch_size = args.train.batch_size_opt->count() > 0;
  cfg.eval_stride = args.stride;

  const bool have_manual = !args.train.changepoints_path.empty();
  std::vector<Scenario> scenarios{Scenario::kNaive, Scenario::kVanilla};
  if (have_manual) scenarios.push_back(Scenario::kBatchCpManual);
  scenarios.push_back(Scenario::kBatchCpMosum);

  const auto slug = [](Scenario s) {
    switch (s) {
      case Scenario::kNaive: return "scenario_I_naive";
      case Scenario::kVanilla: return "scenario_II_vanilla";
      case Scenario::kBatchCpManual: return "scenario_III_batchcp_manual";
      case Scenario::kBatchCpMosum: return "scenario_IV_batchcp_mosum";
    }
    throw ConfigError("unknown scenario");
  };

  std::vector<ScenarioReport> reports;
  for (Scenario s : scenarios) {
    std::cout << "running " << scenario_label(s) << "...\n";
    reports.push_back(run_scenario(s, ts, cfg));
    const auto& r = reports.back();
    std::cout << "  train RMSE " << fmt_double(r.train_rmse) << ", test RMSE "
              << fmt_double(r.test_rmse) << ", batch size " << r.effective_batch_size << "\n";
    write_scenario_report(r, args.out_dir + "/" + slug(s) + ".json");
  }

  const std::string md_path = args.out_dir + "/comparison.md";
  const std::string csv_path = args.out_dir + "/comparison.csv";
  write_comparison_markdown(reports, md_path);
  write_comparison_csv(reports, csv_path);

  std::ifstream table(md_path);
  std::cout << table.rdbuf();
  std::cout << "wrote " << reports.size() << " scenario reports, " << md_path << ", "
            << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "batchcp: change-point-aware probabilistic time-series forecasting.\n"
      "Training windows never straddle detected or supplied change points, so\n"
      "the forecaster only ever sees regime-pure history."};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from an INI/TOML file; flags override it");
  app.get_formatter()->column_width(34);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "Generate a synthetic series CSV plus its ground-truth change points");
  synth_cmd->add_option("--preset", synth.preset,
                        "Preset name: level-shift (3000-point benchmark series) or "
                        "reset-walk (season-score walk)")
      ->capture_default_str();
  CLI::Option* spec_opt =
      synth_cmd->add_option("--spec", synth.spec_path, "Synthetic spec JSON file");
  spec_opt->excludes(synth_cmd->get_option("--preset"));
  synth.seed_opt = synth_cmd->add_option(
      "--seed", synth.seed, "RNG seed override (presets and spec files default to 7)");
  synth_cmd->add_option("--out", synth.out_csv, "Output CSV path")->capture_default_str();
  synth_cmd->add_option("--out-changepoints", synth.out_changepoints,
                        "Ground-truth change-point file")
      ->capture_default_str();

  DetectArgs detect;
  CLI::App* detect_cmd =
      app.add_subcommand("detect", "Detect mean change points with a moving-sum scan");
  detect_cmd->add_option("--input", detect.input, "Input CSV")->required();
  detect.schema.attach(detect_cmd);
  detect.mosum.attach(detect_cmd);
  detect_cmd->add_option("--out-changepoints", detect.out_changepoints,
                         "Detected change-point file")
      ->capture_default_str();
  detect_cmd->add_option("--out-statistic", detect.out_statistic,
                         "Per-position scan statistic CSV (k, T_k)")
      ->capture_default_str();

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Train the forecaster on full series (no holdout; see compare)");
  train_cmd->add_option("--input", train_args.inputs, "Input CSV (repeat for multiple series)")
      ->required();
  train_args.schema.attach(train_cmd);
  train_args.train.attach(train_cmd);
  train_cmd->add_option("--seed", train_args.seed, "RNG seed")->capture_default_str();
  train_cmd->add_option("--out-checkpoint", train_args.out_checkpoint, "Model checkpoint path")
      ->capture_default_str();
  train_cmd->add_option("--out-report", train_args.out_report, "Training report JSON path")
      ->capture_default_str();

  PredictArgs predict_args;
  CLI::App* predict_cmd = app.add_subcommand(
      "predict", "Forecast from a checkpoint using the input CSV as context");
  predict_cmd->add_option("--input", predict_args.input, "Context CSV")->required();
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "Model checkpoint")
      ->required();
  predict_args.schema.attach(predict_cmd);
  predict_cmd->add_option("--horizon", predict_args.horizon, "Forecast steps")
      ->capture_default_str();
  predict_cmd->add_option("--num-samples", predict_args.num_samples, "Sampled trace count")
      ->capture_default_str();
  predict_cmd->add_option("--seed", predict_args.seed, "RNG seed")->capture_default_str();
  predict_cmd->add_option("--future-covariates", predict_args.future_covariates,
                          "CSV with covariate columns for the horizon (same schema; target "
                          "values are ignored)");
  predict_cmd->add_option("--out-forecast", predict_args.out_forecast,
                          "Forecast CSV (step, mu, sigma)")
      ->capture_default_str();
  predict_cmd->add_option("--out-traces", predict_args.out_traces,
                          "Optional sampled-trace CSV (trace, step, value)");

  CompareArgs compare_args;
  CLI::App* compare_cmd = app.add_subcommand(
      "compare", "Run the naive/vanilla/batchcp scenario comparison on one series");
  compare_cmd->add_option("--input", compare_args.input, "Input CSV")->required();
  compare_args.schema.attach(compare_cmd);
  compare_args.train.attach(compare_cmd);
  compare_args.mosum.attach(compare_cmd);
  compare_cmd->add_option("--seed", compare_args.seed, "RNG seed")->capture_default_str();
  compare_cmd->add_option("--stride", compare_args.stride,
                          "Rolling evaluation stride (0: prediction length)")
      ->capture_default_str();
  compare_cmd->add_option("--out-dir", compare_args.out_dir, "Output directory")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage errors are exit code 1 regardless of CLI11 internals
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (detect_cmd->parsed()) return cmd_detect(detect);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (predict_cmd->parsed()) return cmd_predict(predict_args);
    if (compare_cmd->parsed()) return cmd_compare(compare_args);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
}
