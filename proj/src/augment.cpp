// SPDX-License-Identifier: Apache-2.0
#include "tetra/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tetra/rng.hpp"

namespace tetra::train {
namespace {

void check_image(const Tensor& x) {
  if (x.dims.size() != 3 || x.data.size() != x.channels() * x.height() * x.width()) {
    throw std::invalid_argument("augment: expected a [C, H, W] image");
  }
}

float sample_bilinear(const Tensor& x, std::size_t c, double y, double xx) {
  const double maxy = static_cast<double>(x.height() - 1);
  const double maxx = static_cast<double>(x.width() - 1);
  y = std::clamp(y, 0.0, maxy);
  xx = std::clamp(xx, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(xx));
  const std::size_t y1 = std::min(y0 + 1, x.height() - 1);
  const std::size_t x1 = std::min(x0 + 1, x.width() - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = xx - static_cast<double>(x0);
  const double top = x.at(c, y0, x0) * (1 - fx) + x.at(c, y0, x1) * fx;
  const double bot = x.at(c, y1, x0) * (1 - fx) + x.at(c, y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

Tensor gaussian_blur3(const Tensor& x, double sigma) {
  check_image(x);
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur3: sigma must be positive");
  const double side = std::exp(-1.0 / (2.0 * sigma * sigma));
  const double norm = 1.0 + 2.0 * side;
  const double k[3] = {side / norm, 1.0 / norm, side / norm};
  const auto h = static_cast<std::ptrdiff_t>(x.height());
  const auto w = static_cast<std::ptrdiff_t>(x.width());
  Tensor tmp = x;
  Tensor out = x;
  // Separable, clamp-to-edge borders.
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::ptrdiff_t yy = 0; yy < h; ++yy)
      for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d) {
          const auto sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(xx + d, 0, w - 1));
          s += k[d + 1] * x.at(c, static_cast<std::size_t>(yy), sx);
        }
        tmp.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = static_cast<float>(s);
      }
    for (std::ptrdiff_t yy = 0; yy < h; ++yy)
      for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d) {
          const auto sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(yy + d, 0, h - 1));
          s += k[d + 1] * tmp.at(c, sy, static_cast<std::size_t>(xx));
        }
        out.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = static_cast<float>(s);
      }
  }
  return out;
}

Tensor resized_crop(const Tensor& x, double top, double left, double h, double w) {
  check_image(x);
  Tensor out = x;
  const double sy = h / static_cast<double>(x.height());
  const double sx = w / static_cast<double>(x.width());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t yy = 0; yy < x.height(); ++yy)
      for (std::size_t xx = 0; xx < x.width(); ++xx) {
        // Pixel-center mapping from output to crop coordinates.
        const double src_y = top + (static_cast<double>(yy) + 0.5) * sy - 0.5;
        const double src_x = left + (static_cast<double>(xx) + 0.5) * sx - 0.5;
        out.at(c, yy, xx) = sample_bilinear(x, c, src_y, src_x);
      }
  return out;
}

void erase_rect(Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  check_image(x);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t yy = top; yy < std::min(top + h, x.height()); ++yy)
      for (std::size_t xx = left; xx < std::min(left + w, x.width()); ++xx) x.at(c, yy, xx) = 0.0f;
}

void clamp_unit(Tensor& x) {
  for (float& v : x.data) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor augment(const Tensor& x, std::uint64_t seed, const AugmentPolicy& policy) {
  check_image(x);
  Rng rng(seed);
  Tensor out = x;
  bool changed = false;
  const double height = static_cast<double>(x.height());
  const double width = static_cast<double>(x.width());

  if (rng.bernoulli(policy.p_crop)) {
    const double area = rng.uniform(0.7, 1.0) * height * width;
    const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double h = std::min(height, std::sqrt(area / aspect));
    const double w = std::min(width, std::sqrt(area * aspect));
    const double top = rng.uniform(0.0, height - h);
    const double left = rng.uniform(0.0, width - w);
    out = resized_crop(out, top, left, h, w);
    changed = true;
  }
  if (rng.bernoulli(policy.p_brightness)) {
    const double b = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
    const double c = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
    double mean = 0.0;
    for (float v : out.data) mean += v;
    mean /= static_cast<double>(out.data.size());
    for (float& v : out.data) v = static_cast<float>(((v - mean) * c + mean) * b);
    changed = true;
  }
  if (rng.bernoulli(policy.p_color)) {
    const double sat = rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation);
    std::vector<double> gains(out.channels());
    for (double& g : gains) g = rng.uniform(1.0 - policy.channel_gain, 1.0 + policy.channel_gain);
    for (std::size_t yy = 0; yy < out.height(); ++yy)
      for (std::size_t xx = 0; xx < out.width(); ++xx) {
        double gray = 0.0;
        for (std::size_t c = 0; c < out.channels(); ++c) gray += out.at(c, yy, xx);
        gray /= static_cast<double>(out.channels());
        for (std::size_t c = 0; c < out.channels(); ++c) {
          const double v = gray + (out.at(c, yy, xx) - gray) * sat;
          out.at(c, yy, xx) = static_cast<float>(v * gains[c]);
        }
      }
    changed = true;
  }
  if (rng.bernoulli(policy.p_blur)) {
    out = gaussian_blur3(out, rng.uniform(0.3, 1.5));
    changed = true;
  }
  if (rng.bernoulli(policy.p_erase)) {
    const double area = rng.uniform(0.02, 0.2) * height * width;
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(3.3)));
    const auto h = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area * aspect)), 1.0, height));
    const auto w = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area / aspect)), 1.0, width));
    const std::size_t top = rng.below(x.height() - h + 1);
    const std::size_t left = rng.below(x.width() - w + 1);
    erase_rect(out, top, left, h, w);
    changed = true;
  }
  if (changed) clamp_unit(out);
  return out;
}

}  // namespace tetra::train
