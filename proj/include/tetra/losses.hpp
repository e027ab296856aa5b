// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tetra/autodiff.hpp"
#include "tetra/matrix.hpp"
#include "tetra/model.hpp"

namespace tetra::train {

/// Weights of the three distillation terms.
struct DistillWeights {
  double cls = 1.0;
  double tok = 1.0;
  double attn = 0.1;
};

/// Floor applied to student attention probabilities inside the KL term.
inline constexpr double kKlFloor = 1e-12;
/// Allowed deviation of an attention row sum from 1.
inline constexpr double kStochasticTolerance = 1e-4;

/// weight * sum ||T - S||^2 over rows.
double loss_cls(const Matrix& teacher, const Matrix& student, double weight);
double loss_tok(const Matrix& teacher, const Matrix& student, double weight);
/// weight * sum_l sum_rows KL(teacher_l || student_l). Throws std::invalid_argument
/// on mismatched layer counts or rows that are not probability distributions.
double loss_attn(std::span<const Matrix> teacher, std::span<const Matrix> student, double weight);

ad::Var loss_cls(ad::Tape& tape, const Matrix& teacher, ad::Var student, double weight);
ad::Var loss_tok(ad::Tape& tape, const Matrix& teacher, ad::Var student, double weight);
ad::Var loss_attn(ad::Tape& tape, std::span<const Matrix> teacher, std::span<const ad::Var> student, double weight);

/// Indices of the last min(count, layers) layers, ascending.
std::vector<std::size_t> attention_layers(std::size_t layers, std::size_t count = 5);

struct LossBreakdown {
  double cls = 0.0;
  double tok = 0.0;
  double attn = 0.0;
  double total() const noexcept { return cls + tok + attn; }
};

/// Teacher trace on the clean image, student input (usually augmented), loss weights.
struct DistillBatch {
  model::ForwardTrace teacher;
  Tensor student_input;
  DistillWeights weights;
  std::size_t attn_layer_count = 5;
};

/// L_cls + L_tok + L_attn between two traces.
LossBreakdown pretrain_loss(const model::ForwardTrace& teacher, const model::ForwardTrace& student,
                            const DistillWeights& weights, std::size_t attn_layer_count = 5);
/// Runs the student on the batch input and scores it against the teacher trace.
LossBreakdown pretrain_loss(const DistillBatch& batch, const model::ModelWeights& student, model::Mode mode);

struct PretrainNodes {
  ad::Var cls;
  ad::Var tok;
  ad::Var attn;
  ad::Var total;
};
PretrainNodes pretrain_loss_on_tape(ad::Tape& tape, const model::ForwardTrace& teacher,
                                    const model::TapeTrace& student, const DistillWeights& weights,
                                    std::size_t attn_layer_count = 5);

struct MultiSimilarityParams {
  double alpha = 1.0;
  double beta = 50.0;
  double base = 0.0;
  double margin = 0.1;
  bool mining = true;
};

struct MultiSimilarityResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d S, mining treated as fixed
  std::size_t anchors = 0;
};

/// Multi-similarity loss over an anchors×candidates similarity matrix.
///
/// Per anchor i with positives P_i and negatives N_i (after optional mining):
///   (1/alpha) log(1 + sum_P exp(-alpha (S_ik - base)))
/// + (1/beta)  log(1 + sum_N exp( beta (S_ik - base)))
/// averaged over anchors that have at least one positive. With
/// exclude_diagonal the pair (i, i) is ignored (batch against itself).
/// Throws std::invalid_argument if no anchor has a positive.
MultiSimilarityResult multi_similarity(const Matrix& similarity, std::span<const int> anchor_labels,
                                       std::span<const int> candidate_labels, const MultiSimilarityParams& params,
                                       bool exclude_diagonal);
double multi_similarity_loss(const Matrix& similarity, std::span<const int> anchor_labels,
                             std::span<const int> candidate_labels, const MultiSimilarityParams& params,
                             bool exclude_diagonal);
ad::Var multi_similarity_on_tape(ad::Tape& tape, ad::Var similarity, std::span<const int> labels,
                                 const MultiSimilarityParams& params);

/// Cosine similarity matrix of the rows of y.
ad::Var cosine_similarity_on_tape(ad::Tape& tape, ad::Var y);

struct FinetuneLoss {
  double continuous = 0.0;
  double binary = 0.0;
  double total = 0.0;
};

/// (1 - lambda) L_ms(cos(y)) + lambda L_ms(cos(sgn(y))); rows of y are batch embeddings.
FinetuneLoss finetune_loss(const Matrix& embeddings, std::span<const int> labels, double lambda,
                           const MultiSimilarityParams& params);
/// Differentiable form; sgn uses the straight-through estimator.
ad::Var finetune_loss_on_tape(ad::Tape& tape, ad::Var embeddings, std::span<const int> labels, double lambda,
                              const MultiSimilarityParams& params);

}  // namespace tetra::train
