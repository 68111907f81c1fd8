#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <vector>

#include "batchcp/sampler.hpp"

using namespace batchcp;

namespace {

ChangePointSet cps(std::vector<Index> v) { return ChangePointSet(std::move(v)); }

}  // namespace

TEST_CASE("is_valid pins the closed-interval boundary") {
  CHECK(is_valid(0, 6, cps({6})));        // window 0..5, point just outside
  CHECK_FALSE(is_valid(3, 6, cps({6})));  // window 3..8 contains 6
  CHECK(is_valid(7, 6, cps({6})));        // window starts one past the point
  CHECK(is_valid(0, 100, cps({})));
  CHECK_FALSE(is_valid(6, 1, cps({6})));  // single-step window on the point
}

TEST_CASE("enumerate_valid_starts filters the candidate set {0..n-s-1}") {
  CHECK(enumerate_valid_starts(10, 6, cps({6})) == std::vector<Index>{0});
  CHECK(enumerate_valid_starts(10, 6, cps({})) == std::vector<Index>{0, 1, 2, 3});
  CHECK(enumerate_valid_starts(12, 3, cps({5})) == std::vector<Index>{0, 1, 2, 6, 7, 8});
  CHECK(enumerate_valid_starts(10, 10, cps({})).empty());  // s > n-1: no candidates
  CHECK(enumerate_valid_starts(10, 12, cps({})).empty());
  CHECK(enumerate_valid_starts(5, 4, cps({})) == std::vector<Index>{0});
}

TEST_CASE("count_valid_starts agrees with enumeration on random configurations") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 10 + rng.next_below(200);
    const Index s = 1 + rng.next_below(n - 1);
    std::set<Index> points;
    const Index k = rng.next_below(6);
    for (Index i = 0; i < k; ++i) points.insert(rng.next_below(n));
    const ChangePointSet set(std::vector<Index>(points.begin(), points.end()));
    const auto enumerated = enumerate_valid_starts(n, s, set);
    CHECK(count_valid_starts(n, s, set) == static_cast<Index>(enumerated.size()));
  }
}

TEST_CASE("SamplerConfig validates its invariants at construction") {
  CHECK_NOTHROW(SamplerConfig(5, cps({10, 20}), 30));
  CHECK_THROWS_AS(SamplerConfig(0, cps({}), 30), ConfigError);
  CHECK_THROWS_AS(SamplerConfig(30, cps({}), 30), ConfigError);  // s must be <= n-1
  CHECK_NOTHROW(SamplerConfig(29, cps({}), 30));
  CHECK_THROWS_AS(SamplerConfig(5, cps({30}), 30), ConfigError);  // point out of range
  // min gap 10 allows at most s = 5
  CHECK_THROWS_AS(SamplerConfig(6, cps({10, 20}), 30), ConfigError);
  CHECK_THROWS_AS(SamplerConfig(5, cps({}), 30, -1), ConfigError);
}

TEST_CASE("forced start: only one valid window exists") {
  SamplerConfig cfg(6, cps({6}), 10);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const WindowSpec w = sample_valid_batch(cfg, rng);
    CHECK(w.start == 0);
    CHECK(w.length == 6);
    CHECK(w.end() == 5);
  }
}

TEST_CASE("sampled windows are always valid and cover the whole valid set") {
  SamplerConfig cfg(5, cps({10, 20}), 30);
  const auto valid = enumerate_valid_starts(30, 5, cfg.change_points);
  REQUIRE(valid.size() == 15);

  Rng rng(42);
  std::map<Index, int> counts;
  for (int i = 0; i < 10000; ++i) {
    const WindowSpec w = sample_valid_batch(cfg, rng);
    REQUIRE(is_valid(w.start, w.length, cfg.change_points));
    ++counts[w.start];
  }
  // Completeness: every enumerated start was drawn.
  for (Index start : valid) CHECK(counts.count(start) == 1);

  // Uniformity: chi-square with df = 14; critical value at alpha = 0.01.
  const double expected = 10000.0 / static_cast<double>(valid.size());
  double chi2 = 0.0;
  for (Index start : valid) {
    const double d = counts[start] - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 29.1412);
}

TEST_CASE("empty change-point set degenerates to plain uniform sampling") {
  SamplerConfig cfg(10, cps({}), 100);
  Rng rng(8);
  Index lo = 1000, hi = -1;
  for (int i = 0; i < 10000; ++i) {
    const WindowSpec w = sample_valid_batch(cfg, rng);
    lo = std::min(lo, w.start);
    hi = std::max(hi, w.start);
  }
  CHECK(lo == 0);
  CHECK(hi == 89);  // candidates stop at n-s-1
}

TEST_CASE("infeasible layouts fail fast naming the blocking points") {
  // Single change point at 2 blocks every length-3 window of a length-6 series.
  SamplerConfig cfg(3, cps({2}), 6);
  Rng rng(1);
  try {
    sample_valid_batch(cfg, rng);
    FAIL("expected InfeasibleSamplerError");
  } catch (const InfeasibleSamplerError& e) {
    CHECK(e.blocking_change_points == std::vector<Index>{2});
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("retry exhaustion reports the retry count") {
  // Valid starts are {0, 31} out of 32 candidates; acceptance ratio 1/16.
  SamplerConfig cfg(30, cps({30}), 62, /*max_retries=*/2);
  bool saw_exhaustion = false;
  for (std::uint64_t seed = 0; seed < 64 && !saw_exhaustion; ++seed) {
    Rng rng(seed);
    try {
      sample_valid_batch(cfg, rng);
    } catch (const RetryExhaustedError& e) {
      CHECK(e.retries == 2);
      saw_exhaustion = true;
    }
  }
  CHECK(saw_exhaustion);  // (15/16)^2 per seed; 64 seeds make a miss implausible
}

TEST_CASE("default retry cap is ten times the series length") {
  SamplerConfig cfg(5, cps({}), 40);
  CHECK(cfg.effective_max_retries() == 400);
  SamplerConfig capped(5, cps({}), 40, 7);
  CHECK(capped.effective_max_retries() == 7);
}

TEST_CASE("interior segments of length >= s always contain a valid start") {
  // Property behind the s_max rule: with s <= ceil(min gap / 2), training can
  // reach every interior segment; the tail needs one extra point because the
  // candidate range stops at n-s-1.
  Rng rng(55);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Index> points;
    Index cursor = 0;
    const Index k = 2 + rng.next_below(5);
    for (Index i = 0; i < k; ++i) {
      cursor += 4 + rng.next_below(40);
      points.push_back(cursor);
    }
    const Index n = cursor + 4 + rng.next_below(40);
    const ChangePointSet set(points);
    const Index s_max = *max_batch_size(set);
    const Index s = 1 + rng.next_below(s_max);
    const auto valid = enumerate_valid_starts(n, s, set);
    const auto has_start_in = [&valid](Index lo, Index hi) {
      for (Index v : valid) {
        if (v >= lo && v <= hi) return true;
      }
      return false;
    };
    // Head segment [0, points[0]-1]: reachable iff it holds a full window.
    if (points.front() >= s) {
      CHECK(has_start_in(0, points.front() - s));
    }
    // Interior segment j spans [points[j], points[j+1]-1] but index points[j]
    // itself is the change point, so a window needs gap >= s+1 to fit.
    for (std::size_t j = 0; j + 1 < points.size(); ++j) {
      if (points[j + 1] - points[j] >= s + 1) {
        CHECK(has_start_in(points[j] + 1, points[j + 1] - s));
      }
    }
    // Tail segment: candidates stop at n-s-1, costing one extra spare point.
    if (n - points.back() >= s + 2) {
      CHECK(has_start_in(points.back() + 1, n - s - 1));
    }
  }
}
