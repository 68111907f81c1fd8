#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "batchcp/changepoint.hpp"
#include "batchcp/core.hpp"
#include "batchcp/rng.hpp"

namespace batchcp {

/// Raised when no window of the requested length can avoid every change
/// point; carries the points so callers can report which constraints bind.
class InfeasibleSamplerError : public ConfigError {
 public:
  InfeasibleSamplerError(const std::string& what, std::vector<Index> blocking)
      : ConfigError(what), blocking_change_points(std::move(blocking)) {}

  std::vector<Index> blocking_change_points;
};

/// Raised when rejection sampling hits its retry cap even though valid starts
/// exist (astronomically unlikely at the default cap; reachable with a tiny
/// explicit cap).
class RetryExhaustedError : public NumericError {
 public:
  RetryExhaustedError(const std::string& what, Index retries)
      : NumericError(what), retries(retries) {}

  Index retries;
};

/// A window [start, start+s-1] is valid iff it contains no change point. A
/// change point c is the first index of the new regime, so a window may end
/// at c-1 or start at c+1 but never contain c itself.
inline bool is_valid(Index start, Index batch_size, const ChangePointSet& cps) {
  return !cps.any_in(start, start + batch_size - 1);
}

/// Exhaustive filter of the candidate starts {0, ..., n-s-1}. Degenerate
/// inputs (s < 1 or s > n-1) have an empty candidate set and return empty.
/// This is the feasibility oracle; the sampler itself never materialises it.
inline std::vector<Index> enumerate_valid_starts(Index series_length, Index batch_size,
                                                 const ChangePointSet& cps) {
  std::vector<Index> starts;
  if (batch_size < 1) return starts;
  for (Index start = 0; start <= series_length - batch_size - 1; ++start) {
    if (is_valid(start, batch_size, cps)) starts.push_back(start);
  }
  return starts;
}

/// |enumerate_valid_starts| in O(#change points): starts blocked by change
/// point c form the range [c-s+1, c] clipped to the candidate set; ranges of
/// sorted points are merged on the fly.
inline Index count_valid_starts(Index series_length, Index batch_size,
                                const ChangePointSet& cps) {
  if (batch_size < 1 || batch_size > series_length - 1) return 0;
  const Index last_start = series_length - batch_size - 1;
  Index blocked = 0;
  Index covered_up_to = -1;  // highest start already counted as blocked
  for (Index c : cps.indices()) {
    Index lo = std::max<Index>(0, c - batch_size + 1);
    Index hi = std::min<Index>(last_start, c);
    if (hi < lo) continue;
    lo = std::max(lo, covered_up_to + 1);
    if (hi < lo) continue;
    blocked += hi - lo + 1;
    covered_up_to = hi;
  }
  return (last_start + 1) - blocked;
}

struct SamplerConfig {
  Index batch_size = 0;
  ChangePointSet change_points;
  Index series_length = 0;
  /// Rejection cap; 0 means the default of 10 * series_length.
  Index max_retries = 0;
  /// Stream id for callers that derive their RNG from the config; the sampler
  /// itself draws from the Rng it is handed.
  std::uint64_t seed = 0;

  SamplerConfig() = default;
  SamplerConfig(Index batch_size, ChangePointSet cps, Index series_length,
                Index max_retries = 0, std::uint64_t seed = 0)
      : batch_size(batch_size),
        change_points(std::move(cps)),
        series_length(series_length),
        max_retries(max_retries),
        seed(seed) {
    validate();
  }

  Index effective_max_retries() const {
    return max_retries > 0 ? max_retries : 10 * series_length;
  }

  void validate() const {
    if (batch_size < 1 || batch_size > series_length - 1) {
      std::ostringstream os;
      os << "sampler: batch size must satisfy 1 <= s <= n-1, got s=" << batch_size
         << ", n=" << series_length;
      throw ConfigError(os.str());
    }
    if (!change_points.fits_within(series_length)) {
      std::ostringstream os;
      os << "sampler: change point " << change_points.indices().back()
         << " outside series of length " << series_length;
      throw ConfigError(os.str());
    }
    if (const auto s_max = max_batch_size(change_points); s_max && batch_size > *s_max) {
      std::ostringstream os;
      os << "sampler: batch size " << batch_size << " exceeds the largest admissible size "
         << *s_max << " for these change points";
      throw ConfigError(os.str());
    }
    if (max_retries < 0) throw ConfigError("sampler: max_retries must be >= 0");
  }
};

/// Rejection-samples a change-point-free window: draw start uniformly from
/// {0, ..., n-s-1}, accept iff [start, start+s-1] contains no change point.
/// Accepted starts are exactly uniform over the valid set because every
/// candidate has equal proposal probability and rejection never reweights.
///
/// Feasibility is checked up front in O(#change points) so an impossible
/// configuration fails immediately with the blocking points instead of
/// burning the retry budget.
inline WindowSpec sample_valid_batch(const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index n = cfg.series_length;
  const Index s = cfg.batch_size;
  if (count_valid_starts(n, s, cfg.change_points) == 0) {
    std::ostringstream os;
    os << "no window of length " << s << " avoids the change points in a series of length "
       << n << "; blocking change points:";
    for (Index c : cfg.change_points.indices()) os << " " << c;
    throw InfeasibleSamplerError(os.str(), cfg.change_points.indices());
  }
  const Index cap = cfg.effective_max_retries();
  for (Index attempt = 0; attempt < cap; ++attempt) {
    const Index start = rng.next_below(n - s);  // candidates are {0, ..., n-s-1}
    if (is_valid(start, s, cfg.change_points)) {
      return WindowSpec{start, s};
    }
  }
  std::ostringstream os;
  os << "sampler gave up after " << cap << " rejected draws (batch size " << s
     << ", series length " << n << ")";
  throw RetryExhaustedError(os.str(), cap);
}

}  // namespace batchcp
