// SPDX-License-Identifier: Apache-2.0
#include "tetra/timing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tetra {

TimingSummary summarize(std::vector<double> samples_ns) {
  if (samples_ns.empty()) throw std::invalid_argument("summarize: no samples");
  std::sort(samples_ns.begin(), samples_ns.end());
  const auto rank = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(samples_ns.size())));
    return samples_ns[std::clamp<std::size_t>(idx, 1, samples_ns.size()) - 1];
  };
  return {rank(0.5), rank(0.1), rank(0.9)};
}

}  // namespace tetra
