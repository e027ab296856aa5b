// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tetra/matrix.hpp"

// Row-wise building blocks shared by the autodiff ops and the packed inference path.
namespace tetra::nn {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormResult {
  Matrix out;
  Matrix normalized;             // (x - mean) / sqrt(var + eps)
  std::vector<double> inv_std;   // per row
};

/// Normalizes each row over its columns; an all-zero row maps to `shift`.
LayerNormResult layer_norm(const Matrix& x, const Matrix& scale, const Matrix& shift,
                           double eps = kLayerNormEps);

/// tanh approximation of GELU.
double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;
Matrix gelu(const Matrix& x);

Matrix softmax_rows(const Matrix& x);

/// x + bias broadcast over rows; bias is 1×cols.
Matrix add_bias(const Matrix& x, const Matrix& bias);

}  // namespace tetra::nn
