// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace tetra {

/// Seeded generator with platform-independent distributions.
///
/// The engine is std::mt19937_64; the mapping to uniform/normal values is
/// done here rather than through <random> distributions, whose output is
/// implementation-defined, so seeded runs are reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal (Box-Muller, no cached second value).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derives an independent stream for a sub-task.
  Rng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tetra
