// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tetra/matrix.hpp"
#include "tetra/quantize.hpp"

namespace tetra::kernels {

/// Largest reduction length for which 32-bit accumulation of int8 x ternary
/// products cannot overflow (K * 127 < 2^31 with room to spare).
inline constexpr std::size_t kMaxInnerDim = std::size_t{1} << 23;

/// 2-bit field encoding.
inline constexpr std::uint8_t kCodeZero = 0b00;
inline constexpr std::uint8_t kCodePlus = 0b01;
inline constexpr std::uint8_t kCodeInvalid = 0b10;
inline constexpr std::uint8_t kCodeMinus = 0b11;

/// Ternary weights packed four to a byte. Element i (row-major) occupies bits
/// 2*(i%4)..2*(i%4)+1 of bytes[i/4]. Trailing pad fields are 0b00.
struct PackedTernary {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bytes;
  double gamma = 0.0;

  std::size_t size() const noexcept { return rows * cols; }
  static std::size_t bytes_for(std::size_t elements) noexcept { return (elements + 3) / 4; }
  friend bool operator==(const PackedTernary&, const PackedTernary&) = default;
};

/// Pre-scale integer matmul result.
struct IntAccumulator {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> values;

  std::int32_t operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
  friend bool operator==(const IntAccumulator&, const IntAccumulator&) = default;
};

PackedTernary pack(const quant::TernaryTensor& t);
/// Throws DataError if a 0b10 field, a nonzero pad field or a wrong buffer length is found.
quant::TernaryTensor unpack(const PackedTernary& p);
/// Same checks as unpack without materializing the codes.
void validate(const PackedTernary& p);

/// Integer core: acc[m][n] = sum_k code[m][k] * act[n][k].
///
/// `weights` is M×K with K contiguous; `act` holds N tokens of K channels.
/// The optimized kernel unpacks each weight row into an int8 lane buffer and
/// runs OpenMP-parallel over weight rows.
IntAccumulator ternary_accumulate(const PackedTernary& weights, const quant::QuantizedActivation& act);

/// Serial add-only reference: walks packed fields and adds, subtracts or skips
/// each activation code. Fixes the semantics the optimized kernel must match.
IntAccumulator ternary_accumulate_reference(const PackedTernary& weights,
                                            const quant::QuantizedActivation& act);

/// out[m][n] = (gamma * s_n) * acc[m][n]; M×N.
Matrix ternary_matmul(const PackedTernary& weights, const quant::QuantizedActivation& act);

/// Token-major variant used by linear layers: out[n][m], N×M.
Matrix ternary_linear(const PackedTernary& weights, const quant::QuantizedActivation& act);

/// float32 reference, out[m][n] = sum_k w[m][k] * x[n][k] (row-major inputs).
std::vector<float> float_matmul(const std::vector<float>& w, const std::vector<float>& x,
                                std::size_t m, std::size_t k, std::size_t n);

struct MatmulShape {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
};

struct TimingRecord {
  std::string kernel;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  double median_ns = 0.0;
  double p10_ns = 0.0;
  double p90_ns = 0.0;
  std::size_t bytes_weights = 0;
};

/// Weight bytes for a packed M×K tensor, including its one 32-bit scale.
std::size_t packed_weight_bytes(std::size_t elements) noexcept;

/// Times the optimized ternary kernel, the serial reference and a float32
/// matmul at each shape. Throws std::invalid_argument if repeats == 0 or a size is zero.
std::vector<TimingRecord> benchmark_matmul(const std::vector<MatmulShape>& shapes,
                                           std::size_t repeats, std::uint64_t seed = 1);

/// `kernel,m,k,n,median_ns,p10_ns,p90_ns,bytes_weights`
std::string timing_csv(const std::vector<TimingRecord>& records);

}  // namespace tetra::kernels
