#pragma once

#include <charconv>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "batchcp/core.hpp"
#include "batchcp/rng.hpp"

namespace batchcp {

// ---------------------------------------------------------------------------
// Synthetic piecewise-linear series
// ---------------------------------------------------------------------------

/// Piecewise-linear signal plus Gaussian noise:
///   z_t = level_j + slope_j * (t - seg_start_j) + noise_std * eps_t
/// where segment j spans [change_points[j-1], change_points[j]) (segment 0
/// starts at 0). Defaults reproduce the standard benchmark series used across
/// the tests and the CLI preset: 3000 points, 13 level shifts alternating
/// between 0 and 1, flat segments, noise_std 0.25 (each jump is 4 sigma).
struct SyntheticSpec {
  Index n = 3000;
  ChangePointSet change_points{std::vector<Index>{200, 300, 600, 700, 800, 1400, 1500, 1600,
                                                  1700, 2100, 2400, 2600, 2900}};
  std::vector<double> mean_levels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  std::vector<double> slopes = std::vector<double>(14, 0.0);
  double noise_std = 0.25;
  std::uint64_t seed = 7;

  void validate() const {
    if (n < 1) throw ConfigError("synthetic: n must be >= 1");
    if (!change_points.fits_within(n)) {
      throw ConfigError("synthetic: change point outside [0, n)");
    }
    if (!change_points.empty() && change_points.indices().front() < 1) {
      throw ConfigError("synthetic: change points must be >= 1 (segment 0 may not be empty)");
    }
    const auto segments = static_cast<std::size_t>(change_points.size()) + 1;
    if (mean_levels.size() != segments) {
      std::ostringstream os;
      os << "synthetic: " << segments << " segments need " << segments
         << " mean levels, got " << mean_levels.size();
      throw ConfigError(os.str());
    }
    if (slopes.size() != segments) {
      std::ostringstream os;
      os << "synthetic: " << segments << " segments need " << segments << " slopes, got "
         << slopes.size();
      throw ConfigError(os.str());
    }
    if (!(noise_std >= 0.0)) throw ConfigError("synthetic: noise_std must be >= 0");
  }
};

struct SyntheticData {
  TimeSeries series;
  ChangePointSet change_points;  // ground truth used by the generator
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  TimeSeries ts;
  ts.name = "synthetic";
  ts.values.reserve(static_cast<std::size_t>(spec.n));
  const auto& cps = spec.change_points.indices();
  std::size_t seg = 0;
  Index seg_start = 0;
  for (Index t = 0; t < spec.n; ++t) {
    while (seg < cps.size() && t >= cps[seg]) {
      seg_start = cps[seg];
      ++seg;
    }
    const double trend = spec.mean_levels[seg] +
                         spec.slopes[seg] * static_cast<double>(t - seg_start);
    ts.values.push_back(trend + spec.noise_std * rng.next_gaussian());
  }
  return SyntheticData{std::move(ts), spec.change_points};
}

/// Season-score walk: cumulative drifting random walks that restart from zero
/// at fixed indices, mimicking points accumulating over seasons. Defaults give
/// a short 225-step series with eight restarts.
struct WalkSpec {
  Index n = 225;
  ChangePointSet resets{std::vector<Index>{31, 65, 99, 133, 157, 174, 191, 208}};
  double drift = 0.5;
  double step_std = 1.2;
  std::uint64_t seed = 7;

  void validate() const {
    if (n < 1) throw ConfigError("walk: n must be >= 1");
    if (!resets.fits_within(n)) throw ConfigError("walk: reset index outside [0, n)");
    if (!resets.empty() && resets.indices().front() < 1) {
      throw ConfigError("walk: reset indices must be >= 1");
    }
    if (!(step_std >= 0.0)) throw ConfigError("walk: step_std must be >= 0");
  }
};

inline SyntheticData generate_reset_walk(const WalkSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  TimeSeries ts;
  ts.name = "reset-walk";
  ts.values.reserve(static_cast<std::size_t>(spec.n));
  double level = 0.0;
  for (Index t = 0; t < spec.n; ++t) {
    if (spec.resets.contains(t)) level = 0.0;  // new season starts from zero
    level += spec.drift + spec.step_std * rng.next_gaussian();
    ts.values.push_back(level);
  }
  return SyntheticData{std::move(ts), spec.resets};
}

// ---------------------------------------------------------------------------
// Spec JSON round-trip
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SyntheticSpec& spec) {
  return nlohmann::json{{"version", 1},
                        {"n", spec.n},
                        {"change_points", spec.change_points.indices()},
                        {"mean_levels", spec.mean_levels},
                        {"slopes", spec.slopes},
                        {"noise_std", spec.noise_std},
                        {"seed", spec.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  try {
    spec.n = j.at("n").get<Index>();
    spec.change_points = ChangePointSet(j.at("change_points").get<std::vector<Index>>());
    spec.mean_levels = j.at("mean_levels").get<std::vector<double>>();
    spec.slopes = j.at("slopes").get<std::vector<double>>();
    spec.noise_std = j.at("noise_std").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synthetic spec json: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline void write_synthetic_spec(const SyntheticSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << to_json(spec).dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline SyntheticSpec read_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open spec file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return synthetic_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Column mapping for CSV load/save. Columns are referenced by header name;
/// with has_header = false, names are decimal column indices ("0", "1", ...).
/// Fields must be plain numbers: quoting and escaping are not supported.
struct CsvSchema {
  std::string target = "y";
  std::vector<std::string> covariates;
  std::optional<std::string> timestamp;
  char delimiter = ',';
  bool has_header = true;

  void validate() const {
    if (target.empty()) throw ConfigError("csv schema: target column is required");
    std::vector<std::string> all{target};
    all.insert(all.end(), covariates.begin(), covariates.end());
    if (timestamp) all.push_back(*timestamp);
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        if (all[i] == all[j]) {
          throw ConfigError("csv schema: column '" + all[i] + "' referenced twice");
        }
      }
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    f.erase(0, f.find_first_not_of(" \t"));
    f.erase(f.find_last_not_of(" \t") + 1);
  }
  return fields;
}

inline double parse_csv_number(const std::string& field, const std::string& path,
                               Index row, const std::string& column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    std::ostringstream os;
    os << path << ": row " << row << ", column '" << column << "': expected a number, got '"
       << field << "'";
    throw DataError(os.str());
  }
  return value;
}

inline std::size_t resolve_column(const std::vector<std::string>& header,
                                  const std::string& name, bool has_header,
                                  const std::string& path) {
  if (has_header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw DataError(path + ": no column named '" + name + "' in header");
  }
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (ec != std::errc() || ptr != name.data() + name.size()) {
    throw DataError(path + ": without a header, columns are referenced by index; got '" +
                    name + "'");
  }
  if (idx >= header.size()) {
    std::ostringstream os;
    os << path << ": column index " << idx << " out of range (row width " << header.size()
       << ")";
    throw DataError(os.str());
  }
  return idx;
}

}  // namespace detail

/// Loads and validates a series. Row count, finiteness and timestamp
/// monotonicity problems surface as DataError with positions.
inline TimeSeries load_csv(const std::string& path, const CsvSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open csv: " + path);

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(detail::split_csv_line(line, schema.delimiter));
  }
  if (rows.empty()) throw DataError(path + ": file has no rows");

  std::vector<std::string> header = rows.front();
  std::size_t first_data = 0;
  if (schema.has_header) {
    first_data = 1;
    if (rows.size() == 1) throw DataError(path + ": header but no data rows");
  }
  const std::size_t width = header.size();
  const std::size_t target_col =
      detail::resolve_column(header, schema.target, schema.has_header, path);
  std::vector<std::size_t> cov_cols;
  for (const auto& name : schema.covariates) {
    cov_cols.push_back(detail::resolve_column(header, name, schema.has_header, path));
  }
  std::optional<std::size_t> ts_col;
  if (schema.timestamp) {
    ts_col = detail::resolve_column(header, *schema.timestamp, schema.has_header, path);
  }

  TimeSeries ts;
  ts.name = path;
  const Index n = static_cast<Index>(rows.size() - first_data);
  if (!cov_cols.empty()) ts.covariates = Matrix(n, static_cast<Index>(cov_cols.size()));
  if (ts_col) ts.timestamps = std::vector<double>();

  for (std::size_t r = first_data; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const Index out_row = static_cast<Index>(r - first_data);
    if (row.size() != width) {
      std::ostringstream os;
      os << path << ": row " << r + 1 << " has " << row.size() << " fields, expected "
         << width;
      throw DataError(os.str());
    }
    ts.values.push_back(
        detail::parse_csv_number(row[target_col], path, static_cast<Index>(r + 1), schema.target));
    for (std::size_t ci = 0; ci < cov_cols.size(); ++ci) {
      (*ts.covariates)(out_row, static_cast<Index>(ci)) = detail::parse_csv_number(
          row[cov_cols[ci]], path, static_cast<Index>(r + 1), schema.covariates[ci]);
    }
    if (ts_col) {
      ts.timestamps->push_back(detail::parse_csv_number(row[*ts_col], path,
                                                        static_cast<Index>(r + 1),
                                                        *schema.timestamp));
    }
  }
  require_valid(ts);
  return ts;
}

/// Writes the series with the schema's column layout (timestamp first when
/// present, then target, then covariates). Doubles use shortest round-trip
/// formatting so load_csv(save_csv(ts)) reproduces the series exactly.
inline void save_csv(const std::string& path, const TimeSeries& ts, const CsvSchema& schema) {
  schema.validate();
  if (schema.timestamp && !ts.timestamps) {
    throw ConfigError("save_csv: schema names a timestamp column but the series has none");
  }
  if (static_cast<Index>(schema.covariates.size()) != ts.covariate_dim()) {
    std::ostringstream os;
    os << "save_csv: schema lists " << schema.covariates.size() << " covariates, series has "
       << ts.covariate_dim();
    throw ConfigError(os.str());
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);

  const auto fmt = [](double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  };

  if (schema.has_header) {
    bool first = true;
    const auto emit = [&](const std::string& name) {
      if (!first) out << schema.delimiter;
      out << name;
      first = false;
    };
    if (schema.timestamp) emit(*schema.timestamp);
    emit(schema.target);
    for (const auto& c : schema.covariates) emit(c);
    out << "\n";
  }
  for (Index t = 0; t < ts.length(); ++t) {
    bool first = true;
    const auto emit = [&](double v) {
      if (!first) out << schema.delimiter;
      out << fmt(v);
      first = false;
    };
    if (schema.timestamp) emit((*ts.timestamps)[static_cast<std::size_t>(t)]);
    emit(ts.values[static_cast<std::size_t>(t)]);
    for (Index c = 0; c < ts.covariate_dim(); ++c) emit((*ts.covariates)(t, c));
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace batchcp
