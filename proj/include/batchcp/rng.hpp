#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "batchcp/core.hpp"

namespace batchcp {

/// splitmix64 finalizer. Used to derive independent child seeds: it is a
/// bijective avalanche mix, so distinct (seed, stream) pairs map to distinct
/// child seeds with no low-entropy structure surviving.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seedable, splittable random source.
///
/// Engine: std::mt19937_64 seeded through mix64. split(stream) derives a child
/// whose seed depends on (parent seed, stream) only, never on how many draws
/// the parent has made, so subsystems (init / window sampling / prediction)
/// stay reproducible independently of each other.
///
/// Draw algorithms are fixed and documented because sampled values are part of
/// reports: bounded integers use modulo rejection (unbiased), next_unit maps
/// the top 53 bits onto [0,1), gaussians come from Box-Muller and consume
/// exactly two uniform draws each.
class Rng {
 public:
  static constexpr const char* kAlgorithmId =
      "splitmix64-seeded mt19937_64; rejection bounded ints; 53-bit uniforms; box-muller gaussians";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Child stream: deterministic in (seed(), stream), independent of draw count.
  Rng split(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ mix64(stream + 0x517cc1b727220a95ULL)));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound). Rejection sampling keeps it exactly
  /// uniform for every bound, not just powers of two.
  Index next_below(Index bound) {
    if (bound <= 0) throw ConfigError("next_below: bound must be positive");
    const std::uint64_t b = static_cast<std::uint64_t>(bound);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % b;
    std::uint64_t draw;
    do {
      draw = next_u64();
    } while (draw >= limit);
    return static_cast<Index>(draw % b);
  }

  /// Standard normal via Box-Muller; consumes exactly two next_u64 draws.
  double next_gaussian() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    // 1-u1 keeps the log argument in (0, 1]; u1 itself can be exactly 0.
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace batchcp
