#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "batchcp/core.hpp"

namespace batchcp {

/// MOSUM mean-shift detector configuration.
struct MosumConfig {
  /// Dual interpretation: a value in (0, 0.5] is a fraction of the series
  /// length (G = ceil(bandwidth * n)); an integral value >= 1 is an absolute
  /// window size. Anything else is rejected.
  double bandwidth = 0.2;

  /// Minimum-separation factor for the local-max criterion: a candidate k must
  /// dominate T over [k - ceil(eta*G), k + ceil(eta*G)].
  double eta = 0.1;

  /// Reserved significance level. The detector uses the scaled threshold
  /// below, not an alpha-quantile; the field is kept for config compatibility
  /// and currently has no effect.
  double alpha = 0.05;

  /// Threshold tau = threshold_scale * sqrt(2 ln(n/G)).
  double threshold_scale = 1.3;

  /// When set, overrides the formula and is used as tau directly.
  std::optional<double> absolute_threshold;

  /// Resolves the dual bandwidth against a series of length n.
  Index resolve_bandwidth(Index n) const {
    if (n < 2) throw ConfigError("mosum: series too short");
    Index g = 0;
    if (bandwidth > 0.0 && bandwidth <= 0.5) {
      g = static_cast<Index>(std::ceil(bandwidth * static_cast<double>(n)));
    } else if (bandwidth >= 1.0 && bandwidth == std::floor(bandwidth)) {
      g = static_cast<Index>(bandwidth);
    } else {
      std::ostringstream os;
      os << "mosum: bandwidth " << bandwidth
         << " is neither a fraction in (0, 0.5] nor an integer >= 1";
      throw ConfigError(os.str());
    }
    if (2 * g > n) {
      std::ostringstream os;
      os << "mosum: bandwidth G=" << g << " needs series length >= " << 2 * g
         << ", got " << n;
      throw ConfigError(os.str());
    }
    return g;
  }
};

struct MosumResult {
  /// statistic[i] is T_k at k = first_k + i; the domain is
  /// k in [G-1, n-G-1], so statistic has n - 2G + 1 entries.
  std::vector<double> statistic;
  Index first_k = 0;
  Index bandwidth = 0;      // resolved G
  double sigma_hat = 0.0;
  double threshold = 0.0;
  ChangePointSet change_points;
};

/// Noise-scale estimate that is robust to mean shifts: sqrt of half the mean
/// squared first difference. For i.i.d. noise e_t, E[(e_t - e_{t-1})^2] =
/// 2 sigma^2, and the few difference terms straddling a shift are swamped by
/// the n-1 others.
inline double diff_sigma_estimate(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) throw ConfigError("sigma estimate needs at least 2 values");
  double acc = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    const double d = values[t] - values[t - 1];
    acc += d * d;
  }
  return std::sqrt(acc / (2.0 * static_cast<double>(n - 1)));
}

/// Moving-sum statistic
///   T_k = | sum_{t=k+1}^{k+G} z_t - sum_{t=k-G+1}^{k} z_t | / (sigma_hat * sqrt(2G))
/// for k in [G-1, n-G-1]. A constant series has sigma_hat = 0 and, necessarily,
/// zero numerators; that case returns an all-zero statistic instead of 0/0.
inline std::vector<double> mosum_statistic(
    const TimeSeries& ts, Index bandwidth,
    std::optional<double> sigma_override = std::nullopt) {
  const Index n = ts.length();
  const Index g = bandwidth;
  if (g < 1) throw ConfigError("mosum: bandwidth must be >= 1");
  if (2 * g > n) {
    std::ostringstream os;
    os << "mosum: bandwidth G=" << g << " needs series length >= " << 2 * g
       << ", got " << n;
    throw ConfigError(os.str());
  }
  const double sigma = sigma_override ? *sigma_override : diff_sigma_estimate(ts.values);
  if (sigma < 0.0 || !std::isfinite(sigma)) {
    throw ConfigError("mosum: sigma must be finite and >= 0");
  }

  // prefix[t] = sum of values[0, t); window sums become two subtractions.
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (Index t = 0; t < n; ++t) {
    prefix[static_cast<std::size_t>(t) + 1] =
        prefix[static_cast<std::size_t>(t)] + ts.values[static_cast<std::size_t>(t)];
  }
  const auto range_sum = [&prefix](Index lo, Index hi) {  // sum over [lo, hi]
    return prefix[static_cast<std::size_t>(hi) + 1] - prefix[static_cast<std::size_t>(lo)];
  };

  std::vector<double> stat;
  stat.reserve(static_cast<std::size_t>(n - 2 * g + 1));
  const double denom = sigma * std::sqrt(2.0 * static_cast<double>(g));
  for (Index k = g - 1; k <= n - g - 1; ++k) {
    const double right = range_sum(k + 1, k + g);
    const double left = range_sum(k - g + 1, k);
    const double numer = std::abs(right - left);
    stat.push_back(sigma == 0.0 ? 0.0 : numer / denom);
  }
  return stat;
}

/// tau = threshold_scale * sqrt(2 ln(n/G)), or the absolute override.
inline double mosum_threshold(Index n, Index bandwidth, const MosumConfig& cfg) {
  if (cfg.absolute_threshold) {
    if (*cfg.absolute_threshold <= 0.0) {
      throw ConfigError("mosum: absolute threshold must be positive");
    }
    return *cfg.absolute_threshold;
  }
  if (cfg.threshold_scale <= 0.0) {
    throw ConfigError("mosum: threshold_scale must be positive");
  }
  if (n <= bandwidth) throw ConfigError("mosum: need n > G for the threshold");
  return cfg.threshold_scale *
         std::sqrt(2.0 * std::log(static_cast<double>(n) / static_cast<double>(bandwidth)));
}

/// Full detector: statistic + threshold + eta local-max criterion.
///
/// k is flagged iff T_k > tau and T_k is maximal over the clamped window
/// [k - h, k + h], h = ceil(eta * G). Ties break leftmost: the candidate must
/// strictly dominate earlier entries and weakly dominate later ones. The
/// reported index k is the last pre-shift position under this statistic's
/// alignment; downstream consumers treat change points as the first index of
/// the new regime, one step later, which is well inside any bandwidth-scale
/// matching tolerance.
inline MosumResult detect_change_points(const TimeSeries& ts, const MosumConfig& cfg) {
  require_valid(ts);
  const Index n = ts.length();
  const Index g = cfg.resolve_bandwidth(n);
  if (cfg.eta <= 0.0) throw ConfigError("mosum: eta must be positive");

  MosumResult result;
  result.bandwidth = g;
  result.first_k = g - 1;
  result.sigma_hat = diff_sigma_estimate(ts.values);
  result.statistic = mosum_statistic(ts, g);
  result.threshold = mosum_threshold(n, g, cfg);

  const Index h = static_cast<Index>(std::ceil(cfg.eta * static_cast<double>(g)));
  const Index m = static_cast<Index>(result.statistic.size());
  std::vector<Index> found;
  for (Index i = 0; i < m; ++i) {
    const double t_i = result.statistic[static_cast<std::size_t>(i)];
    if (!(t_i > result.threshold)) continue;
    const Index lo = std::max<Index>(0, i - h);
    const Index hi = std::min<Index>(m - 1, i + h);
    bool is_peak = true;
    for (Index j = lo; j < i && is_peak; ++j) {
      if (result.statistic[static_cast<std::size_t>(j)] >= t_i) is_peak = false;
    }
    for (Index j = i + 1; j <= hi && is_peak; ++j) {
      if (result.statistic[static_cast<std::size_t>(j)] > t_i) is_peak = false;
    }
    if (is_peak) found.push_back(result.first_k + i);
  }
  result.change_points = ChangePointSet(std::move(found));
  return result;
}

/// Largest admissible training-window length for a set of change points:
/// ceil(min pairwise distance / 2). Fewer than two points leave the window
/// length unconstrained, signalled by nullopt. Sorted input makes the minimum
/// pairwise distance the minimum adjacent difference.
inline std::optional<Index> max_batch_size(const ChangePointSet& cps) {
  const auto& idx = cps.indices();
  if (idx.size() < 2) return std::nullopt;
  Index min_gap = idx[1] - idx[0];
  for (std::size_t i = 2; i < idx.size(); ++i) {
    min_gap = std::min(min_gap, idx[i] - idx[i - 1]);
  }
  return (min_gap + 1) / 2;  // ceil(min_gap / 2) for positive integers
}

/// Plain-text change-point files: one index per line, sorted on write.
inline void write_change_points(const std::string& path, const ChangePointSet& cps) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (Index c : cps.indices()) out << c << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline ChangePointSet read_change_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open change-point file: " + path);
  std::vector<Index> indices;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
    trimmed.erase(trimmed.find_last_not_of(" \t\r") + 1);
    if (trimmed.empty()) continue;
    std::size_t consumed = 0;
    long long value = 0;
    try {
      value = std::stoll(trimmed, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != trimmed.size()) {
      std::ostringstream os;
      os << path << ":" << line_no << ": expected an integer index, got '" << trimmed << "'";
      throw DataError(os.str());
    }
    indices.push_back(static_cast<Index>(value));
  }
  try {
    return ChangePointSet(std::move(indices));
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace batchcp
