// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "tetra/tensor_io.hpp"

namespace tetra::train {

/// Place-style nuisance transforms, each applied with its own probability.
struct AugmentPolicy {
  double p_brightness = 0.5;  // brightness and contrast jitter
  double p_blur = 0.3;        // 3x3 Gaussian, sigma in [0.3, 1.5]
  double p_crop = 0.5;        // random resized crop, area in [0.7, 1.0]
  double p_color = 0.3;       // saturation and per-channel gain jitter
  double p_erase = 0.3;       // random erasing, area in [2%, 20%], fill 0

  double brightness = 0.3;  // factor in [1 - b, 1 + b]
  double contrast = 0.3;
  double saturation = 0.4;
  double channel_gain = 0.1;

  static AugmentPolicy none() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
};

/// Deterministic in (x, seed, policy). Output is clamped to [0, 1]; with every
/// probability at zero the input is returned unchanged.
Tensor augment(const Tensor& x, std::uint64_t seed, const AugmentPolicy& policy);

// Individual transforms (also used by the synthetic dataset generator).
Tensor gaussian_blur3(const Tensor& x, double sigma);
/// Crops [top, top+h) × [left, left+w) and resamples bilinearly back to the input size.
Tensor resized_crop(const Tensor& x, double top, double left, double h, double w);
void erase_rect(Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
void clamp_unit(Tensor& x);

}  // namespace tetra::train
