// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tetra/matrix.hpp"

namespace tetra::quant {

/// Offset added to the abs-mean scale before dividing weights by it.
inline constexpr double kTernaryEps = 1e-6;
inline constexpr int kActivationBits = 8;

/// Ternary weights: one code in {-1, 0, +1} per element plus a per-tensor scale.
///
/// Codes are held unpacked here; kernels::pack produces the 2-bit layout.
struct TernaryTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> codes;
  double gamma = 0.0;

  std::size_t size() const noexcept { return codes.size(); }
  friend bool operator==(const TernaryTensor&, const TernaryTensor&) = default;
};

/// Per-token symmetric integer activations: row j is reconstructed as scales[j] * codes[j, :].
struct QuantizedActivation {
  std::size_t rows = 0;  // tokens
  std::size_t cols = 0;  // channels
  std::vector<std::int8_t> codes;
  std::vector<double> scales;

  std::int8_t code(std::size_t r, std::size_t c) const noexcept { return codes[r * cols + c]; }
  std::span<const std::int8_t> row(std::size_t r) const noexcept {
    return {codes.data() + r * cols, cols};
  }
};

/// Sigmoid schedule lambda(t) = 1 / (1 + exp(-alpha * t + beta)).
struct QuantSchedule {
  double alpha = 1.0;
  double beta = 0.0;
  std::uint64_t step = 0;
};

/// D-bit sign vector. Bit i lives in words[i / 64] at position i % 64;
/// a set bit means +1, a clear bit means -1. Unused high bits are zero.
class BinaryEmbedding {
 public:
  BinaryEmbedding() = default;
  explicit BinaryEmbedding(std::size_t dim);
  /// Adopts packed words; throws if the word count is wrong or padding bits are set.
  BinaryEmbedding(std::size_t dim, std::vector<std::uint64_t> words);

  std::size_t dim() const noexcept { return dim_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }
  bool bit(std::size_t i) const noexcept { return (words_[i / 64] >> (i % 64)) & 1U; }
  void set_bit(std::size_t i, bool value) noexcept;

  /// The ±1 vector this embedding encodes.
  std::vector<double> to_signs() const;

  static std::size_t words_for(std::size_t dim) noexcept { return (dim + 63) / 64; }
  friend bool operator==(const BinaryEmbedding&, const BinaryEmbedding&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Abs-mean ternarization: gamma = mean|W|, codes = round(clamp(W / (gamma + eps), -1, 1)).
/// Rounding is half away from zero. Throws std::invalid_argument on empty or non-finite input.
TernaryTensor ternary_quantize(const Matrix& weights);
Matrix ternary_dequantize(const TernaryTensor& t);

/// Per-token quantization to `bits`-bit signed codes, s_j = max|X_j| / (2^(bits-1) - 1).
/// A zero row gets scale 0 and zero codes.
QuantizedActivation act_quantize(const Matrix& x, int bits = kActivationBits);
Matrix act_dequantize(const QuantizedActivation& q);

/// lambda at a real-valued step. Written as 1 / (1 + exp(-alpha * (t - beta / alpha)))
/// so that t == beta / alpha lands exactly on 0.5.
double lambda_at(double alpha, double beta, double t);
double lambda_schedule(const QuantSchedule& sched);

/// (1 - lambda) W + lambda * dequantize(ternary_quantize(W)).
Matrix blend_weights(const Matrix& weights, double lambda);

/// Straight-through gradient of the weight quantizer: passes grad_out where |W| <= gamma.
Matrix ste_weight_grad(const Matrix& grad_out, const Matrix& weights, double gamma);

/// Bit i set iff y_i > 0. Zero maps to the -1 side.
BinaryEmbedding sign_binarize(std::span<const double> y);

}  // namespace tetra::quant
