// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <vector>

namespace tetra {

struct TimingSummary {
  double median_ns = 0.0;
  double p10_ns = 0.0;
  double p90_ns = 0.0;
};

/// Nearest-rank percentiles over the samples. Throws on an empty sample set.
TimingSummary summarize(std::vector<double> samples_ns);

template <typename F>
double time_ns(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::nano>(stop - start).count();
}

}  // namespace tetra
