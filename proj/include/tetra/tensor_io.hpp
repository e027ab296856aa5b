// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tetra {

/// Row-major float32 tensor. Images are [channels, height, width] in [0, 1].
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<float> data;

  static Tensor image(std::size_t channels, std::size_t height, std::size_t width, float fill = 0.0f) {
    return {{channels, height, width}, std::vector<float>(channels * height * width, fill)};
  }
  std::size_t channels() const { return dims.at(0); }
  std::size_t height() const { return dims.at(1); }
  std::size_t width() const { return dims.at(2); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * dims[1] + y) * dims[2] + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * dims[1] + y) * dims[2] + x]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// TNSR layout (little-endian): "TNSR", u8 dtype (0 = f32), u8 ndim, u32 dims[ndim], f32 payload.
inline constexpr std::uint8_t kTensorDtypeF32 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Throws DataError on bad magic, unknown dtype, truncation or trailing bytes.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Binary 8-bit PPM (P6) to a [3, H, W] tensor scaled to [0, 1].
Tensor decode_ppm(std::span<const std::uint8_t> bytes);

/// Reads a .ppm as P6, anything else as TNSR.
Tensor read_image(const std::filesystem::path& path);

}  // namespace tetra
