// SPDX-License-Identifier: Apache-2.0
#include "tetra/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tetra::quant {

BinaryEmbedding::BinaryEmbedding(std::size_t dim) : dim_(dim), words_(words_for(dim), 0) {}

BinaryEmbedding::BinaryEmbedding(std::size_t dim, std::vector<std::uint64_t> words)
    : dim_(dim), words_(std::move(words)) {
  if (words_.size() != words_for(dim_)) {
    throw std::invalid_argument("BinaryEmbedding: word count does not match dimension");
  }
  if (dim_ % 64 != 0 && !words_.empty()) {
    const std::uint64_t pad_mask = ~((std::uint64_t{1} << (dim_ % 64)) - 1);
    if (words_.back() & pad_mask) {
      throw std::invalid_argument("BinaryEmbedding: padding bits set");
    }
  }
}

void BinaryEmbedding::set_bit(std::size_t i, bool value) noexcept {
  const std::uint64_t mask = std::uint64_t{1} << (i % 64);
  if (value) {
    words_[i / 64] |= mask;
  } else {
    words_[i / 64] &= ~mask;
  }
}

std::vector<double> BinaryEmbedding::to_signs() const {
  std::vector<double> out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = bit(i) ? 1.0 : -1.0;
  return out;
}

TernaryTensor ternary_quantize(const Matrix& weights) {
  if (weights.empty()) throw std::invalid_argument("ternary_quantize: empty matrix");
  if (!all_finite(weights.values())) {
    throw std::invalid_argument("ternary_quantize: non-finite weight");
  }
  double abs_sum = 0.0;
  for (double w : weights.values()) abs_sum += std::abs(w);

  TernaryTensor t;
  t.rows = weights.rows();
  t.cols = weights.cols();
  t.gamma = abs_sum / static_cast<double>(weights.size());
  t.codes.resize(weights.size());
  const double denom = t.gamma + kTernaryEps;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double c = std::clamp(weights[i] / denom, -1.0, 1.0);
    t.codes[i] = static_cast<std::int8_t>(std::round(c));
  }
  return t;
}

Matrix ternary_dequantize(const TernaryTensor& t) {
  Matrix out(t.rows, t.cols);
  for (std::size_t i = 0; i < t.codes.size(); ++i) out[i] = t.gamma * t.codes[i];
  return out;
}

QuantizedActivation act_quantize(const Matrix& x, int bits) {
  if (bits < 2 || bits > 8) throw std::invalid_argument("act_quantize: bit width must be in [2, 8]");
  if (!all_finite(x.values())) throw std::invalid_argument("act_quantize: non-finite activation");
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);

  QuantizedActivation q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.codes.assign(x.size(), 0);
  q.scales.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    double amax = 0.0;
    for (double v : row) amax = std::max(amax, std::abs(v));
    if (amax == 0.0) continue;
    q.scales[r] = amax / qmax;
    // x / s computed as (x / amax) * qmax: exact whenever x / amax is a dyadic fraction.
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double v = std::round(row[c] / amax * qmax);
      q.codes[r * q.cols + c] = static_cast<std::int8_t>(std::clamp(v, -qmax, qmax));
    }
  }
  return q;
}

Matrix act_dequantize(const QuantizedActivation& q) {
  Matrix out(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r)
    for (std::size_t c = 0; c < q.cols; ++c) out(r, c) = q.scales[r] * q.code(r, c);
  return out;
}

double lambda_at(double alpha, double beta, double t) {
  if (!(alpha > 0.0)) throw std::invalid_argument("lambda_schedule: alpha must be positive");
  return 1.0 / (1.0 + std::exp(-alpha * (t - beta / alpha)));
}

double lambda_schedule(const QuantSchedule& sched) {
  return lambda_at(sched.alpha, sched.beta, static_cast<double>(sched.step));
}

Matrix blend_weights(const Matrix& weights, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("blend_weights: lambda outside [0, 1]");
  }
  const Matrix q = ternary_dequantize(ternary_quantize(weights));
  Matrix out(weights.rows(), weights.cols());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = (1.0 - lambda) * weights[i] + lambda * q[i];
  }
  return out;
}

Matrix ste_weight_grad(const Matrix& grad_out, const Matrix& weights, double gamma) {
  if (!grad_out.same_shape(weights)) throw std::invalid_argument("ste_weight_grad: shape mismatch");
  Matrix out(weights.rows(), weights.cols());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = std::abs(weights[i]) <= gamma ? grad_out[i] : 0.0;
  }
  return out;
}

BinaryEmbedding sign_binarize(std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("sign_binarize: empty vector");
  if (!all_finite(y)) throw std::invalid_argument("sign_binarize: non-finite value");
  BinaryEmbedding e(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) e.set_bit(i, true);
  }
  return e;
}

}  // namespace tetra::quant
