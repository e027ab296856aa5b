// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tetra/matrix.hpp"

// Minimal matrix-level reverse-mode autodiff used for toy-scale QAT.
namespace tetra::ad {

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

/// What quantizer nodes compute in the forward pass.
///
/// kQuantized is the training/inference behaviour: real rounding forward,
/// straight-through backward. kSurrogate replaces each quantizer's forward by
/// the smooth function its straight-through gradient is the derivative of
/// (clamp for weights, identity for activations and signs), which makes the
/// whole graph differentiable and finite-difference checkable.
enum class QuantForward { kQuantized, kSurrogate };

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(QuantForward mode = QuantForward::kQuantized) : mode_(mode) {}

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Adds an op node. The backward function is dropped if no input needs a gradient.
  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Accumulated gradient; a zero matrix of the value's shape if nothing flowed in.
  const Matrix& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  QuantForward quant_forward() const noexcept { return mode_; }

  /// Backpropagates from a 1×1 loss. Throws std::invalid_argument otherwise.
  void backward(Var loss);
  /// Backpropagates an explicit upstream gradient into `out`.
  void backward(Var out, const Matrix& seed);

  /// For op implementations: adds g into v's gradient if v requires one.
  void accumulate(Var v, const Matrix& g);
  const Matrix& upstream(std::size_t self) const { return nodes_[self].grad; }
  Var input(std::size_t self, std::size_t i) const { return nodes_[self].inputs[i]; }
  std::size_t input_count(std::size_t self) const { return nodes_[self].inputs.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  QuantForward mode_;
};

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
/// Elementwise product.
Var mul(Tape& t, Var a, Var b);
/// x + bias broadcast over rows; bias is 1×cols.
Var add_bias(Tape& t, Var x, Var bias);
Var matmul(Tape& t, Var a, Var b);
/// a·bᵀ. With b = a weight stored out×in this is a linear layer.
Var matmul_nt(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end);
Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t end);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var layer_norm(Tape& t, Var x, Var scale, Var shift);
Var gelu(Tape& t, Var x);
Var softmax_rows(Tape& t, Var x);
/// Elementwise mean of equally shaped inputs.
Var average(Tape& t, std::span<const Var> parts);
Var sum(Tape& t, Var a);
/// sum((a - b)^2) as a 1×1 node.
Var squared_distance(Tape& t, Var a, Var b);
/// sum over rows of KL(p_row || max(q_row, floor)); p is a constant target.
Var kl_rows(Tape& t, const Matrix& p, Var q, double floor = 1e-12);
Var l2_normalize_rows(Tape& t, Var y, double eps = 1e-12);

/// Progressive ternary weight: (1 - lambda) W + lambda Q(W).
///
/// gamma defaults to mean|W| of the current value and is held constant in the
/// backward pass. Backward is (1 - lambda) g + lambda g * [|W| <= gamma].
Var ternary_weight(Tape& t, Var w, double lambda, std::optional<double> gamma = std::nullopt);
/// Progressive per-token activation quantization: (1 - lambda) X + lambda Q_x(X),
/// identity straight-through backward.
Var act_fake_quant(Tape& t, Var x, double lambda, int bits = 8);
/// sgn forward (0 maps to -1), identity straight-through backward.
Var sign_ste(Tape& t, Var y);

}  // namespace tetra::ad
