#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchcp {

using Index = std::int64_t;

/// Invalid configuration or arguments supplied by the caller (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or unusable input data: files, series contents (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric failure at runtime: divergence, non-finite loss, exhausted retries
/// (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix. Deliberately minimal: the numeric kernels in this
/// library are explicit loops, so only storage and element access live here.
struct Matrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(Index r, Index c, double fill = 0.0) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ConfigError("Matrix: negative dimensions");
    data.assign(static_cast<std::size_t>(r * c), fill);
  }

  double& operator()(Index r, Index c) {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  double operator()(Index r, Index c) const {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  bool empty() const { return data.empty(); }
};

/// A univariate target with optional per-step covariates and timestamps.
/// values[t] is z_t; covariates row t holds x_t; both share the time axis.
struct TimeSeries {
  std::string name;
  std::vector<double> values;
  std::optional<Matrix> covariates;             // rows == values.size()
  std::optional<std::vector<double>> timestamps;  // strictly increasing

  Index length() const { return static_cast<Index>(values.size()); }
  Index covariate_dim() const { return covariates ? covariates->cols : 0; }
};

struct ValidationIssue {
  std::string field;    // "values", "covariates", "timestamps"
  Index index;          // offending position, -1 when not positional
  std::string message;
};

/// Checks finiteness of values/covariates, shape agreement and timestamp
/// monotonicity. Returns every violation rather than stopping at the first.
inline std::vector<ValidationIssue> validate_series(const TimeSeries& ts) {
  std::vector<ValidationIssue> issues;
  const Index n = ts.length();
  if (n == 0) issues.push_back({"values", -1, "series is empty"});
  for (Index t = 0; t < n; ++t) {
    if (!std::isfinite(ts.values[static_cast<std::size_t>(t)])) {
      issues.push_back({"values", t, "non-finite target value"});
    }
  }
  if (ts.covariates) {
    const Matrix& x = *ts.covariates;
    if (x.rows != n) {
      std::ostringstream os;
      os << "covariate rows (" << x.rows << ") != series length (" << n << ")";
      issues.push_back({"covariates", -1, os.str()});
    }
    for (Index r = 0; r < x.rows; ++r) {
      for (Index c = 0; c < x.cols; ++c) {
        if (!std::isfinite(x(r, c))) {
          std::ostringstream os;
          os << "non-finite covariate in column " << c;
          issues.push_back({"covariates", r, os.str()});
        }
      }
    }
  }
  if (ts.timestamps) {
    const auto& stamps = *ts.timestamps;
    if (static_cast<Index>(stamps.size()) != n) {
      issues.push_back({"timestamps", -1, "timestamp count != series length"});
    }
    for (std::size_t t = 0; t + 1 < stamps.size(); ++t) {
      if (!(stamps[t] < stamps[t + 1])) {
        issues.push_back({"timestamps", static_cast<Index>(t + 1),
                          "timestamps not strictly increasing"});
      }
    }
  }
  return issues;
}

/// Throws DataError listing every validation issue; returns ts on success.
inline const TimeSeries& require_valid(const TimeSeries& ts) {
  const auto issues = validate_series(ts);
  if (issues.empty()) return ts;
  std::ostringstream os;
  os << "invalid series";
  if (!ts.name.empty()) os << " '" << ts.name << "'";
  os << ":";
  for (const auto& issue : issues) {
    os << "\n  " << issue.field;
    if (issue.index >= 0) os << "[" << issue.index << "]";
    os << ": " << issue.message;
  }
  throw DataError(os.str());
}

/// Copies values[offset, offset+count) together with the matching covariate
/// rows and timestamps. Bounds are checked.
inline TimeSeries slice(const TimeSeries& ts, Index offset, Index count) {
  if (offset < 0 || count < 0 || offset + count > ts.length()) {
    std::ostringstream os;
    os << "slice [" << offset << ", " << offset + count
       << ") out of range for series of length " << ts.length();
    throw ConfigError(os.str());
  }
  TimeSeries out;
  out.name = ts.name;
  out.values.assign(ts.values.begin() + offset,
                    ts.values.begin() + offset + count);
  if (ts.covariates) {
    Matrix x(count, ts.covariates->cols);
    for (Index r = 0; r < count; ++r) {
      for (Index c = 0; c < x.cols; ++c) x(r, c) = (*ts.covariates)(offset + r, c);
    }
    out.covariates = std::move(x);
  }
  if (ts.timestamps) {
    out.timestamps = std::vector<double>(ts.timestamps->begin() + offset,
                                         ts.timestamps->begin() + offset + count);
  }
  return out;
}

/// Sorted set of change-point indices. A change point c marks the FIRST index
/// of the post-change regime: the pre-change segment ends at c-1.
class ChangePointSet {
 public:
  ChangePointSet() = default;

  explicit ChangePointSet(std::vector<Index> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    for (std::size_t i = 0; i < indices_.size(); ++i) {
      if (indices_[i] < 0) throw ConfigError("change-point index must be >= 0");
      if (i > 0 && indices_[i] == indices_[i - 1]) {
        std::ostringstream os;
        os << "duplicate change-point index " << indices_[i];
        throw ConfigError(os.str());
      }
    }
  }

  const std::vector<Index>& indices() const { return indices_; }
  Index size() const { return static_cast<Index>(indices_.size()); }
  bool empty() const { return indices_.empty(); }

  bool contains(Index t) const {
    return std::binary_search(indices_.begin(), indices_.end(), t);
  }

  /// True iff some change point lies in the CLOSED interval [lo, hi].
  bool any_in(Index lo, Index hi) const {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), lo);
    return it != indices_.end() && *it <= hi;
  }

  /// All indices strictly below n, i.e. addressable in a series of length n.
  bool fits_within(Index n) const {
    return indices_.empty() || indices_.back() < n;
  }

  bool operator==(const ChangePointSet& other) const {
    return indices_ == other.indices_;
  }

 private:
  std::vector<Index> indices_;
};

/// Half-open window [start, start+length) over a series; end is the last
/// contained index, kept explicit because the sampler's validity test and the
/// training loop both reason about it.
struct WindowSpec {
  Index start = 0;
  Index length = 0;

  Index end() const { return start + length - 1; }  // inclusive
};

/// Validates a window against a series of length n: start >= 0, length >= 1,
/// start + length <= n.
inline WindowSpec make_window(Index start, Index length, Index series_length) {
  if (length < 1) throw ConfigError("window length must be >= 1");
  if (start < 0 || start + length > series_length) {
    std::ostringstream os;
    os << "window [" << start << ", " << start + length
       << ") out of range for series of length " << series_length;
    throw ConfigError(os.str());
  }
  return WindowSpec{start, length};
}

/// Per-step Gaussian predictive distribution plus the sampled trajectories
/// that produced it. traces is num_samples x horizon.
struct GaussianForecast {
  std::vector<double> mu;     // predictive means, length == horizon
  std::vector<double> sigma;  // predictive stddevs, length == horizon
  Matrix traces;              // ancestral sample paths

  Index horizon() const { return static_cast<Index>(mu.size()); }
};

}  // namespace batchcp
