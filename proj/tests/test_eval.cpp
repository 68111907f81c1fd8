#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "batchcp/eval.hpp"

using namespace batchcp;

namespace {

TimeSeries linear_series(Index n) {
  TimeSeries ts;
  ts.name = "linear";
  for (Index t = 0; t < n; ++t) ts.values.push_back(static_cast<double>(t));
  return ts;
}

TimeSeries jump_series(Index n, Index jump_at, double magnitude, std::uint64_t seed) {
  Rng rng(seed);
  TimeSeries ts;
  ts.name = "jump";
  for (Index t = 0; t < n; ++t) {
    ts.values.push_back((t >= jump_at ? magnitude : 0.0) + 0.25 * rng.next_gaussian());
  }
  return ts;
}

ScenarioConfig small_scenario() {
  ScenarioConfig cfg;
  cfg.train.batch_size = 20;
  cfg.train.context_length = 16;
  cfg.train.prediction_length = 4;
  cfg.train.windows_per_epoch = 4;
  cfg.train.epochs = 2;
  cfg.train.net.hidden = 2;
  cfg.train.net.dense = 2;
  return cfg;
}

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_all(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("rmse computes the pooled root mean squared error") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  CHECK(rmse(a, a) == 0.0);

  const std::vector<double> b{0.0, 4.0, 1.0, 8.0};
  // squared errors {1, 4, 4, 16}, mean 6.25
  CHECK(rmse(a, b) == Catch::Approx(2.5).epsilon(1e-15));

  const std::vector<double> p{3.0, 4.0};
  const std::vector<double> q{0.0, 0.0};
  CHECK(rmse(p, q) == Catch::Approx(std::sqrt(12.5)).epsilon(1e-15));

  std::vector<double> offset = a;
  for (double& v : offset) v += 0.75;
  CHECK(rmse(offset, a) == Catch::Approx(0.75).epsilon(1e-14));

  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), ConfigError);
  CHECK_THROWS_AS(rmse(a, p), ConfigError);
}

TEST_CASE("split_60_20_20 uses floor arithmetic and covers the whole series") {
  const auto sizes = [](Index n) {
    const SplitSlices s = split_60_20_20(linear_series(n));
    return std::array<Index, 3>{s.train.length(), s.validation.length(), s.test.length()};
  };
  CHECK(sizes(10) == std::array<Index, 3>{6, 2, 2});
  CHECK(sizes(10200) == std::array<Index, 3>{6120, 2040, 2040});
  CHECK(sizes(5) == std::array<Index, 3>{3, 1, 1});
  CHECK(sizes(7) == std::array<Index, 3>{4, 1, 2});
  CHECK_THROWS_AS(split_60_20_20(linear_series(4)), ConfigError);

  // Concatenating the three slices reproduces the original series.
  for (Index n : {5, 17, 100, 301}) {
    const TimeSeries ts = linear_series(n);
    const SplitSlices s = split_60_20_20(ts);
    std::vector<double> joined = s.train.values;
    joined.insert(joined.end(), s.validation.values.begin(), s.validation.values.end());
    joined.insert(joined.end(), s.test.values.begin(), s.test.values.end());
    CHECK(joined == ts.values);
  }
}

TEST_CASE("split keeps covariates and timestamps in lockstep") {
  TimeSeries ts = linear_series(20);
  ts.timestamps = ts.values;
  ts.covariates = Matrix(20, 2);
  for (Index t = 0; t < 20; ++t) {
    (*ts.covariates)(t, 0) = static_cast<double>(t);
    (*ts.covariates)(t, 1) = -static_cast<double>(t);
  }
  const SplitSlices s = split_60_20_20(ts);
  REQUIRE(s.validation.covariates.has_value());
  REQUIRE(s.validation.timestamps.has_value());
  CHECK(s.validation.length() == 4);
  // Validation starts at global index 12.
  CHECK(s.validation.values.front() == 12.0);
  CHECK((*s.validation.covariates)(0, 0) == 12.0);
  CHECK((*s.validation.covariates)(0, 1) == -12.0);
  CHECK(s.validation.timestamps->front() == 12.0);
  CHECK(s.test.values.front() == 16.0);
  CHECK((*s.test.covariates)(3, 0) == 19.0);
}

TEST_CASE("naive scenario on a linear series has a closed-form RMSE") {
  const TimeSeries ts = linear_series(100);
  const ScenarioConfig cfg = small_scenario();
  const ScenarioReport report = run_scenario(Scenario::kNaive, ts, cfg);
  // Last-value forecasts lag a unit-slope line by {1,2,3,4} at every origin.
  const double expected = std::sqrt((1.0 + 4.0 + 9.0 + 16.0) / 4.0);
  CHECK(report.train_rmse == Catch::Approx(expected).epsilon(1e-12));
  CHECK(report.test_rmse == Catch::Approx(expected).epsilon(1e-12));
  CHECK(report.train_report.total_windows == 0);
  CHECK(report.change_points_used.empty());
  CHECK(report.config_snapshot.at("mode") == "none");
  CHECK(report.effective_batch_size == 20);

  // No training, so the seed cannot matter.
  ScenarioConfig other = cfg;
  other.train.seed = 12345;
  const ScenarioReport again = run_scenario(Scenario::kNaive, ts, other);
  CHECK(again.train_rmse == report.train_rmse);
  CHECK(again.test_rmse == report.test_rmse);
}

TEST_CASE("trained scenarios are bitwise deterministic") {
  const TimeSeries ts = jump_series(150, 45, 4.0, 11);
  ScenarioConfig cfg = small_scenario();
  cfg.manual_change_points = ChangePointSet({45});
  const ScenarioReport a = run_scenario(Scenario::kVanilla, ts, cfg);
  const ScenarioReport b = run_scenario(Scenario::kVanilla, ts, cfg);
  CHECK(a.train_rmse == b.train_rmse);
  CHECK(a.test_rmse == b.test_rmse);
  CHECK(a.train_report.epoch_train_nll == b.train_report.epoch_train_nll);
}

TEST_CASE("scenario II counts straddles while III avoids them") {
  const TimeSeries ts = jump_series(150, 45, 4.0, 11);
  ScenarioConfig cfg = small_scenario();
  cfg.manual_change_points = ChangePointSet({45, 120});  // 120 is outside the train slice

  const ScenarioReport vanilla = run_scenario(Scenario::kVanilla, ts, cfg);
  CHECK(vanilla.train_report.changepoint_windows > 0);

  const ScenarioReport manual = run_scenario(Scenario::kBatchCpManual, ts, cfg);
  CHECK(manual.train_report.changepoint_windows == 0);
  CHECK(manual.change_points_used == std::vector<Index>{45});  // filtered to train slice
}

TEST_CASE("scenario IV equals scenario III when fed the same change points") {
  const TimeSeries ts = jump_series(150, 45, 8.0, 13);
  ScenarioConfig cfg = small_scenario();
  const ScenarioReport mosum = run_scenario(Scenario::kBatchCpMosum, ts, cfg);
  REQUIRE(!mosum.change_points_used.empty());  // the 32-sigma jump must be found

  ScenarioConfig manual_cfg = cfg;
  manual_cfg.manual_change_points = ChangePointSet(mosum.change_points_used);
  const ScenarioReport manual = run_scenario(Scenario::kBatchCpManual, ts, manual_cfg);
  CHECK(manual.change_points_used == mosum.change_points_used);
  CHECK(manual.train_rmse == mosum.train_rmse);
  CHECK(manual.test_rmse == mosum.test_rmse);
  CHECK(manual.train_report.epoch_train_nll == mosum.train_report.epoch_train_nll);
}

TEST_CASE("explicit oversized batch fails; implicit one is clamped") {
  const TimeSeries ts = jump_series(200, 40, 4.0, 17);
  ScenarioConfig cfg = small_scenario();
  // Two points 30 apart inside the train slice cap the batch size at 15.
  cfg.manual_change_points = ChangePointSet({40, 70});

  ScenarioConfig strict = cfg;
  strict.explicit_batch_size = true;
  CHECK_THROWS_WITH(run_scenario(Scenario::kBatchCpManual, ts, strict),
                    Catch::Matchers::ContainsSubstring("15"));

  const ScenarioReport clamped = run_scenario(Scenario::kBatchCpManual, ts, cfg);
  CHECK(clamped.effective_batch_size == 15);
  CHECK(clamped.effective_prediction_length == 3);  // max(1, 15/5)
  CHECK(clamped.effective_context_length == 12);
  CHECK(clamped.train_report.changepoint_windows == 0);
  CHECK(std::isfinite(clamped.test_rmse));

  // Vanilla ignores the cap even with the same points configured.
  const ScenarioReport vanilla = run_scenario(Scenario::kVanilla, ts, cfg);
  CHECK(vanilla.effective_batch_size == 20);
}

TEST_CASE("eval stride changes the rolling origins") {
  TimeSeries ts;
  for (Index t = 0; t < 150; ++t) {  // test slice of 30 leaves room for several origins
    ts.values.push_back(0.01 * static_cast<double>(t) * static_cast<double>(t));
  }
  const ScenarioConfig by_horizon = small_scenario();
  ScenarioConfig by_one = small_scenario();
  by_one.eval_stride = 1;
  const double a = run_scenario(Scenario::kNaive, ts, by_horizon).test_rmse;
  const double b = run_scenario(Scenario::kNaive, ts, by_one).test_rmse;
  CHECK(a != b);  // quadratic curvature makes origin choice matter
  CHECK(std::isfinite(a));
  CHECK(std::isfinite(b));
}

TEST_CASE("scenario report json carries the label and the numbers") {
  const TimeSeries ts = linear_series(100);
  const ScenarioReport report = run_scenario(Scenario::kNaive, ts, small_scenario());
  const std::string path = temp_file("batchcp_scenario.json");
  write_scenario_report(report, path);

  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  CHECK(j.at("scenario") == "I naive");
  CHECK(j.at("train_rmse").get<double>() == report.train_rmse);
  CHECK(j.at("test_rmse").get<double>() == report.test_rmse);
  CHECK(j.at("config").at("mode") == "none");
  CHECK(j.at("train_report").at("total_windows") == 0);
  std::remove(path.c_str());
}

TEST_CASE("comparison tables render one row per scenario") {
  ScenarioReport a;
  a.scenario = Scenario::kNaive;
  a.train_rmse = 1.25;
  a.test_rmse = 2.5;
  a.effective_batch_size = 20;
  ScenarioReport b;
  b.scenario = Scenario::kBatchCpManual;
  b.train_rmse = 0.5;
  b.test_rmse = 0.75;
  b.effective_batch_size = 15;
  b.change_points_used = {40, 70};

  const std::string md_path = temp_file("batchcp_table.md");
  write_comparison_markdown({a, b}, md_path);
  const std::string md = read_all(md_path);
  CHECK(md.find("| scenario | train RMSE | test RMSE | batch size | change points used |") !=
        std::string::npos);
  CHECK(md.find("| I naive | 1.250000 | 2.500000 | 20 | 0 |") != std::string::npos);
  CHECK(md.find("| III batchcp-manual | 0.500000 | 0.750000 | 15 | 2 |") != std::string::npos);
  std::remove(md_path.c_str());

  const std::string csv_path = temp_file("batchcp_table.csv");
  write_comparison_csv({a, b}, csv_path);
  const std::string csv = read_all(csv_path);
  CHECK(csv.find("scenario,train_rmse,test_rmse,batch_size,change_points_used") !=
        std::string::npos);
  CHECK(csv.find("I naive,1.25,2.5,20,0") != std::string::npos);
  CHECK(csv.find("III batchcp-manual,0.5,0.75,15,2") != std::string::npos);
  std::remove(csv_path.c_str());
}
