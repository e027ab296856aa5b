// SPDX-License-Identifier: Apache-2.0
#include "tetra/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tetra::nn {
namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

LayerNormResult layer_norm(const Matrix& x, const Matrix& scale, const Matrix& shift, double eps) {
  const std::size_t c = x.cols();
  if (scale.size() != c || shift.size() != c) throw std::invalid_argument("layer_norm: parameter width mismatch");
  LayerNormResult r{Matrix(x.rows(), c), Matrix(x.rows(), c), std::vector<double>(x.rows())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    r.inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xn = (row[j] - mean) * inv;
      r.normalized(i, j) = xn;
      r.out(i, j) = xn * scale[j] + shift[j];
    }
  }
  return r;
}

double gelu(double x) noexcept {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

double gelu_grad(double x) noexcept {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Matrix gelu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      out(i, j) = std::exp(row[j] - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= sum;
  }
  return out;
}

Matrix add_bias(const Matrix& x, const Matrix& bias) {
  if (bias.size() != x.cols()) throw std::invalid_argument("add_bias: width mismatch");
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += bias[j];
  return out;
}

}  // namespace tetra::nn
