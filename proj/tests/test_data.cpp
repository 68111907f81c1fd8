#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "batchcp/data.hpp"

using namespace batchcp;

namespace {

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << content;
}

}  // namespace

TEST_CASE("synthetic generator is deterministic in the seed") {
  const SyntheticSpec spec;
  const SyntheticData a = generate_synthetic(spec);
  const SyntheticData b = generate_synthetic(spec);
  CHECK(a.series.values == b.series.values);
  CHECK(a.series.name == "synthetic");
  CHECK(a.series.length() == 3000);
  CHECK(a.change_points == spec.change_points);

  SyntheticSpec other = spec;
  other.seed = 8;
  CHECK(generate_synthetic(other).series.values != a.series.values);
}

TEST_CASE("noise-free synthetic output is exactly piecewise linear") {
  SyntheticSpec flat;
  flat.n = 10;
  flat.change_points = ChangePointSet({3, 7});
  flat.mean_levels = {1.0, 2.0, 3.0};
  flat.slopes = {0.0, 0.0, 0.0};
  flat.noise_std = 0.0;
  const std::vector<double> expected_flat{1, 1, 1, 2, 2, 2, 2, 3, 3, 3};
  CHECK(generate_synthetic(flat).series.values == expected_flat);

  SyntheticSpec sloped;
  sloped.n = 6;
  sloped.change_points = ChangePointSet({3});
  sloped.mean_levels = {0.0, 10.0};
  sloped.slopes = {1.0, -2.0};  // slope restarts at each segment's own origin
  sloped.noise_std = 0.0;
  const std::vector<double> expected_sloped{0, 1, 2, 10, 8, 6};
  CHECK(generate_synthetic(sloped).series.values == expected_sloped);
}

TEST_CASE("default preset segments hover around their configured levels") {
  const SyntheticSpec spec;
  const SyntheticData data = generate_synthetic(spec);
  std::vector<Index> bounds{0};
  for (Index c : spec.change_points.indices()) bounds.push_back(c);
  bounds.push_back(spec.n);
  for (std::size_t j = 0; j + 1 < bounds.size(); ++j) {
    double sum = 0.0;
    for (Index t = bounds[j]; t < bounds[j + 1]; ++t) {
      sum += data.series.values[static_cast<std::size_t>(t)];
    }
    const double mean = sum / static_cast<double>(bounds[j + 1] - bounds[j]);
    INFO("segment " << j << " over [" << bounds[j] << ", " << bounds[j + 1] << ")");
    CHECK(mean == Catch::Approx(spec.mean_levels[j]).margin(0.1));
  }
}

TEST_CASE("synthetic spec validation rejects inconsistent shapes") {
  SyntheticSpec spec;
  spec.n = 100;
  spec.change_points = ChangePointSet({50});
  spec.mean_levels = {0.0, 1.0};
  spec.slopes = {0.0, 0.0};

  CHECK_NOTHROW(spec.validate());

  SyntheticSpec bad = spec;
  bad.change_points = ChangePointSet({100});  // outside [0, n)
  bad.mean_levels = {0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = spec;
  bad.change_points = ChangePointSet({0});  // segment 0 would be empty
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = spec;
  bad.mean_levels = {0.0};  // two segments need two levels
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = spec;
  bad.slopes = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = spec;
  bad.noise_std = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = spec;
  bad.n = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("reset walk restarts near zero at every reset index") {
  const WalkSpec spec;
  const SyntheticData data = generate_reset_walk(spec);
  CHECK(data.series.length() == 225);
  CHECK(data.series.name == "reset-walk");
  CHECK(data.change_points == spec.resets);
  CHECK(generate_reset_walk(spec).series.values == data.series.values);

  const auto& v = data.series.values;
  double total_drop = 0.0;
  for (Index r : spec.resets.indices()) {
    const double at_reset = v[static_cast<std::size_t>(r)];
    CHECK(std::fabs(at_reset) < 6.0);  // one drifted step from zero
    total_drop += v[static_cast<std::size_t>(r - 1)] - at_reset;
  }
  // Seasons accumulate ~0.5 per step, so the average drop is large.
  CHECK(total_drop / static_cast<double>(spec.resets.size()) > 5.0);
}

TEST_CASE("synthetic spec json round-trips") {
  SyntheticSpec spec;
  spec.n = 500;
  spec.change_points = ChangePointSet({100, 350});
  spec.mean_levels = {0.5, -1.25, 3.0};
  spec.slopes = {0.0, 0.01, -0.02};
  spec.noise_std = 0.4;
  spec.seed = 99;

  const std::string path = temp_file("batchcp_spec_roundtrip.json");
  write_synthetic_spec(spec, path);
  const SyntheticSpec loaded = read_synthetic_spec(path);
  CHECK(loaded.n == spec.n);
  CHECK(loaded.change_points == spec.change_points);
  CHECK(loaded.mean_levels == spec.mean_levels);
  CHECK(loaded.slopes == spec.slopes);
  CHECK(loaded.noise_std == spec.noise_std);
  CHECK(loaded.seed == spec.seed);
  std::remove(path.c_str());
}

TEST_CASE("synthetic spec json rejects malformed input") {
  const std::string path = temp_file("batchcp_spec_bad.json");

  write_file(path, "not json at all");
  CHECK_THROWS_AS(read_synthetic_spec(path), DataError);

  write_file(path, R"({"version": 1, "n": 100})");  // missing keys
  CHECK_THROWS_AS(read_synthetic_spec(path), DataError);

  // Parses fine but fails validation: change point beyond n.
  write_file(path, R"({"version": 1, "n": 100, "change_points": [150],
                       "mean_levels": [0, 1], "slopes": [0, 0],
                       "noise_std": 0.1, "seed": 1})");
  CHECK_THROWS_AS(read_synthetic_spec(path), ConfigError);

  std::remove(path.c_str());
  CHECK_THROWS_AS(read_synthetic_spec(path), DataError);
}

TEST_CASE("csv loading reads target, timestamp, and covariates by name") {
  const std::string path = temp_file("batchcp_basic.csv");
  write_file(path, "t,y\n0,1.5\n1,2.5\n2,-3\n");
  CsvSchema schema;
  schema.timestamp = "t";
  const TimeSeries ts = load_csv(path, schema);
  CHECK(ts.values == std::vector<double>{1.5, 2.5, -3.0});
  REQUIRE(ts.timestamps.has_value());
  CHECK(*ts.timestamps == std::vector<double>{0.0, 1.0, 2.0});
  CHECK(!ts.covariates.has_value());
  CHECK(ts.name == path);

  write_file(path, "y,a,b\n1, 10 ,100\n2,20,200\n");
  CsvSchema with_cov;
  with_cov.covariates = {"b", "a"};  // schema order wins, not file order
  const TimeSeries ts2 = load_csv(path, with_cov);
  REQUIRE(ts2.covariates.has_value());
  CHECK(ts2.covariates->cols == 2);
  CHECK((*ts2.covariates)(0, 0) == 100.0);
  CHECK((*ts2.covariates)(0, 1) == 10.0);
  CHECK((*ts2.covariates)(1, 0) == 200.0);
  CHECK((*ts2.covariates)(1, 1) == 20.0);
  std::remove(path.c_str());
}

TEST_CASE("csv loading reports bad cells with row and column") {
  const std::string path = temp_file("batchcp_badcell.csv");
  write_file(path, "t,y\n0,1.0\n1,abc\n");
  CsvSchema schema;
  schema.timestamp = "t";
  try {
    load_csv(path, schema);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("'y'") != std::string::npos);
    CHECK(msg.find("abc") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv loading rejects structural problems") {
  const std::string path = temp_file("batchcp_structure.csv");

  write_file(path, "t,y\n0,1.0\n1\n");  // ragged row
  CsvSchema schema;
  CHECK_THROWS_WITH(load_csv(path, schema),
                    Catch::Matchers::ContainsSubstring("expected 2"));

  write_file(path, "t,z\n0,1.0\n");  // no column named y
  CHECK_THROWS_WITH(load_csv(path, schema), Catch::Matchers::ContainsSubstring("'y'"));

  write_file(path, "");
  CHECK_THROWS_WITH(load_csv(path, schema), Catch::Matchers::ContainsSubstring("no rows"));

  write_file(path, "t,y\n");
  CHECK_THROWS_WITH(load_csv(path, schema), Catch::Matchers::ContainsSubstring("no data rows"));

  write_file(path, "t,y\n0,nan\n1,2.0\n");  // parses, then fails validation
  CsvSchema with_ts;
  with_ts.timestamp = "t";
  CHECK_THROWS_AS(load_csv(path, with_ts), DataError);

  write_file(path, "t,y\n5,1.0\n5,2.0\n");  // timestamps must strictly increase
  CHECK_THROWS_AS(load_csv(path, with_ts), DataError);

  std::remove(path.c_str());
  CHECK_THROWS_AS(load_csv(path, schema), DataError);
}

TEST_CASE("headerless csv uses column indices as names") {
  const std::string path = temp_file("batchcp_noheader.csv");
  write_file(path, "5,1\n6,2\n");
  CsvSchema schema;
  schema.has_header = false;
  schema.target = "0";
  schema.covariates = {"1"};
  const TimeSeries ts = load_csv(path, schema);
  CHECK(ts.values == std::vector<double>{5.0, 6.0});
  CHECK((*ts.covariates)(1, 0) == 2.0);

  CsvSchema named;
  named.has_header = false;
  named.target = "y";  // names are invalid without a header
  CHECK_THROWS_WITH(load_csv(path, named),
                    Catch::Matchers::ContainsSubstring("referenced by index"));

  CsvSchema out_of_range;
  out_of_range.has_header = false;
  out_of_range.target = "7";
  CHECK_THROWS_WITH(load_csv(path, out_of_range),
                    Catch::Matchers::ContainsSubstring("out of range"));
  std::remove(path.c_str());
}

TEST_CASE("csv schema validation rejects duplicates and empty targets") {
  CsvSchema dup;
  dup.covariates = {"a", "a"};
  CHECK_THROWS_AS(dup.validate(), ConfigError);

  CsvSchema clash;
  clash.timestamp = "y";  // same as default target
  CHECK_THROWS_AS(clash.validate(), ConfigError);

  CsvSchema empty;
  empty.target = "";
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("csv round-trip preserves doubles exactly") {
  TimeSeries ts;
  ts.name = "roundtrip";
  ts.values = {3.141592653589793, -1e300, 1e-300, 0.1, -0.0, 12345.6789};
  ts.timestamps = std::vector<double>{0, 1, 2, 3, 4, 5};
  ts.covariates = Matrix(6, 2);
  Rng rng(17);
  for (double& v : ts.covariates->data) v = rng.next_gaussian() * 1e6;

  CsvSchema schema;
  schema.timestamp = "t";
  schema.covariates = {"c0", "c1"};
  const std::string path = temp_file("batchcp_roundtrip.csv");
  save_csv(path, ts, schema);
  const TimeSeries back = load_csv(path, schema);
  CHECK(back.values == ts.values);
  CHECK(*back.timestamps == *ts.timestamps);
  CHECK(back.covariates->data == ts.covariates->data);
  std::remove(path.c_str());
}

TEST_CASE("csv round-trip works with alternative delimiters") {
  TimeSeries ts;
  ts.values = {1.5, 2.5, 3.5};
  CsvSchema schema;
  schema.delimiter = ';';
  const std::string path = temp_file("batchcp_semicolon.csv");
  save_csv(path, ts, schema);
  CHECK(load_csv(path, schema).values == ts.values);
  std::remove(path.c_str());
}

TEST_CASE("save_csv validates the schema against the series shape") {
  TimeSeries ts;
  ts.values = {1.0, 2.0};
  CsvSchema wants_ts;
  wants_ts.timestamp = "t";
  CHECK_THROWS_AS(save_csv(temp_file("batchcp_never.csv"), ts, wants_ts), ConfigError);

  CsvSchema wants_cov;
  wants_cov.covariates = {"a"};
  CHECK_THROWS_AS(save_csv(temp_file("batchcp_never.csv"), ts, wants_cov), ConfigError);
}
