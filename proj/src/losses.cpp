// SPDX-License-Identifier: Apache-2.0
#include "tetra/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tetra::train {
namespace {

void check_weight(double w, const char* what) {
  if (!(w >= 0.0)) throw std::invalid_argument(std::string(what) + ": loss weight must be >= 0");
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

void check_stochastic(const Matrix& m, const char* who) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string("loss_attn: negative probability in ") + who);
      s += v;
    }
    if (std::abs(s - 1.0) > kStochasticTolerance) {
      throw std::invalid_argument(std::string("loss_attn: ") + who + " row " + std::to_string(i) +
                                  " is not stochastic (sum " + std::to_string(s) + ")");
    }
  }
}

double sum_sq_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double kl_sum(const Matrix& p, const Matrix& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  }
  return s;
}

}  // namespace

double loss_cls(const Matrix& teacher, const Matrix& student, double weight) {
  check_weight(weight, "loss_cls");
  check_same_shape(teacher, student, "loss_cls");
  return weight * sum_sq_diff(teacher, student);
}

double loss_tok(const Matrix& teacher, const Matrix& student, double weight) {
  check_weight(weight, "loss_tok");
  check_same_shape(teacher, student, "loss_tok");
  return weight * sum_sq_diff(teacher, student);
}

double loss_attn(std::span<const Matrix> teacher, std::span<const Matrix> student, double weight) {
  check_weight(weight, "loss_attn");
  if (teacher.size() != student.size()) throw std::invalid_argument("loss_attn: layer count mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    check_same_shape(teacher[l], student[l], "loss_attn");
    check_stochastic(teacher[l], "teacher");
    check_stochastic(student[l], "student");
    s += kl_sum(teacher[l], student[l]);
  }
  return weight * s;
}

ad::Var loss_cls(ad::Tape& tape, const Matrix& teacher, ad::Var student, double weight) {
  check_weight(weight, "loss_cls");
  check_same_shape(teacher, tape.value(student), "loss_cls");
  return ad::scale(tape, ad::squared_distance(tape, student, tape.constant(teacher)), weight);
}

ad::Var loss_tok(ad::Tape& tape, const Matrix& teacher, ad::Var student, double weight) {
  check_weight(weight, "loss_tok");
  check_same_shape(teacher, tape.value(student), "loss_tok");
  return ad::scale(tape, ad::squared_distance(tape, student, tape.constant(teacher)), weight);
}

ad::Var loss_attn(ad::Tape& tape, std::span<const Matrix> teacher, std::span<const ad::Var> student, double weight) {
  check_weight(weight, "loss_attn");
  if (teacher.size() != student.size() || teacher.empty()) {
    throw std::invalid_argument("loss_attn: layer count mismatch");
  }
  std::vector<ad::Var> terms;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    check_same_shape(teacher[l], tape.value(student[l]), "loss_attn");
    check_stochastic(teacher[l], "teacher");
    check_stochastic(tape.value(student[l]), "student");
    terms.push_back(ad::kl_rows(tape, teacher[l], student[l], kKlFloor));
  }
  ad::Var total = terms.front();
  for (std::size_t l = 1; l < terms.size(); ++l) total = ad::add(tape, total, terms[l]);
  return ad::scale(tape, total, weight);
}

std::vector<std::size_t> attention_layers(std::size_t layers, std::size_t count) {
  const std::size_t n = std::min(count, layers);
  std::vector<std::size_t> out;
  for (std::size_t l = layers - n; l < layers; ++l) out.push_back(l);
  return out;
}

LossBreakdown pretrain_loss(const model::ForwardTrace& teacher, const model::ForwardTrace& student,
                            const DistillWeights& weights, std::size_t attn_layer_count) {
  if (teacher.attention.size() != student.attention.size()) {
    throw std::invalid_argument("pretrain_loss: teacher and student depth differ");
  }
  std::vector<Matrix> t_maps;
  std::vector<Matrix> s_maps;
  for (std::size_t l : attention_layers(teacher.attention.size(), attn_layer_count)) {
    t_maps.push_back(teacher.attention[l]);
    s_maps.push_back(student.attention[l]);
  }
  LossBreakdown b;
  b.cls = loss_cls(teacher.cls, student.cls, weights.cls);
  b.tok = loss_tok(teacher.tokens, student.tokens, weights.tok);
  b.attn = loss_attn(t_maps, s_maps, weights.attn);
  return b;
}

LossBreakdown pretrain_loss(const DistillBatch& batch, const model::ModelWeights& student, model::Mode mode) {
  const model::ForwardTrace s = model::vit_forward(batch.student_input, student, mode);
  return pretrain_loss(batch.teacher, s, batch.weights, batch.attn_layer_count);
}

PretrainNodes pretrain_loss_on_tape(ad::Tape& tape, const model::ForwardTrace& teacher,
                                    const model::TapeTrace& student, const DistillWeights& weights,
                                    std::size_t attn_layer_count) {
  if (teacher.attention.size() != student.attention.size()) {
    throw std::invalid_argument("pretrain_loss: teacher and student depth differ");
  }
  std::vector<Matrix> t_maps;
  std::vector<ad::Var> s_maps;
  for (std::size_t l : attention_layers(teacher.attention.size(), attn_layer_count)) {
    t_maps.push_back(teacher.attention[l]);
    s_maps.push_back(student.attention[l]);
  }
  PretrainNodes n;
  n.cls = loss_cls(tape, teacher.cls, student.cls, weights.cls);
  n.tok = loss_tok(tape, teacher.tokens, student.tokens, weights.tok);
  n.attn = loss_attn(tape, t_maps, s_maps, weights.attn);
  n.total = ad::add(tape, ad::add(tape, n.cls, n.tok), n.attn);
  return n;
}

MultiSimilarityResult multi_similarity(const Matrix& s, std::span<const int> anchor_labels,
                                       std::span<const int> candidate_labels, const MultiSimilarityParams& p,
                                       bool exclude_diagonal) {
  if (s.rows() != anchor_labels.size() || s.cols() != candidate_labels.size()) {
    throw std::invalid_argument("multi_similarity: label counts do not match the similarity matrix");
  }
  if (!(p.alpha > 0.0) || !(p.beta > 0.0)) throw std::invalid_argument("multi_similarity: alpha and beta must be > 0");
  if (!all_finite(s.values())) throw std::invalid_argument("multi_similarity: non-finite similarity");

  MultiSimilarityResult r;
  r.grad = Matrix(s.rows(), s.cols());
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    pos.clear();
    neg.clear();
    for (std::size_t k = 0; k < s.cols(); ++k) {
      if (exclude_diagonal && k == i) continue;
      (candidate_labels[k] == anchor_labels[i] ? pos : neg).push_back(k);
    }
    if (pos.empty()) continue;
    ++r.anchors;
    if (p.mining) {
      double min_pos = std::numeric_limits<double>::infinity();
      double max_neg = -std::numeric_limits<double>::infinity();
      for (std::size_t k : pos) min_pos = std::min(min_pos, s(i, k));
      for (std::size_t k : neg) max_neg = std::max(max_neg, s(i, k));
      std::erase_if(neg, [&](std::size_t k) { return !(s(i, k) > min_pos - p.margin); });
      std::erase_if(pos, [&](std::size_t k) { return !(s(i, k) < max_neg + p.margin); });
    }
    double pos_sum = 0.0;
    for (std::size_t k : pos) pos_sum += std::exp(-p.alpha * (s(i, k) - p.base));
    double neg_sum = 0.0;
    for (std::size_t k : neg) neg_sum += std::exp(p.beta * (s(i, k) - p.base));
    r.loss += std::log1p(pos_sum) / p.alpha + std::log1p(neg_sum) / p.beta;
    for (std::size_t k : pos) r.grad(i, k) = -std::exp(-p.alpha * (s(i, k) - p.base)) / (1.0 + pos_sum);
    for (std::size_t k : neg) r.grad(i, k) = std::exp(p.beta * (s(i, k) - p.base)) / (1.0 + neg_sum);
  }
  if (r.anchors == 0) throw std::invalid_argument("multi_similarity: no anchor has a positive pair");
  const double inv = 1.0 / static_cast<double>(r.anchors);
  r.loss *= inv;
  for (double& g : r.grad.values()) g *= inv;
  return r;
}

double multi_similarity_loss(const Matrix& similarity, std::span<const int> anchor_labels,
                             std::span<const int> candidate_labels, const MultiSimilarityParams& params,
                             bool exclude_diagonal) {
  return multi_similarity(similarity, anchor_labels, candidate_labels, params, exclude_diagonal).loss;
}

ad::Var multi_similarity_on_tape(ad::Tape& tape, ad::Var similarity, std::span<const int> labels,
                                 const MultiSimilarityParams& params) {
  MultiSimilarityResult r = multi_similarity(tape.value(similarity), labels, labels, params, true);
  return tape.record(Matrix(1, 1, r.loss), {similarity}, [grad = std::move(r.grad)](ad::Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    Matrix gs = grad;
    for (double& v : gs.values()) v *= g;
    tp.accumulate(tp.input(self, 0), gs);
  });
}

ad::Var cosine_similarity_on_tape(ad::Tape& tape, ad::Var y) {
  const ad::Var z = ad::l2_normalize_rows(tape, y);
  return ad::matmul_nt(tape, z, z);
}

ad::Var finetune_loss_on_tape(ad::Tape& tape, ad::Var embeddings, std::span<const int> labels, double lambda,
                              const MultiSimilarityParams& params) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("finetune_loss: lambda outside [0, 1]");
  const ad::Var cont = multi_similarity_on_tape(tape, cosine_similarity_on_tape(tape, embeddings), labels, params);
  const ad::Var bin = multi_similarity_on_tape(
      tape, cosine_similarity_on_tape(tape, ad::sign_ste(tape, embeddings)), labels, params);
  return ad::add(tape, ad::scale(tape, cont, 1.0 - lambda), ad::scale(tape, bin, lambda));
}

FinetuneLoss finetune_loss(const Matrix& embeddings, std::span<const int> labels, double lambda,
                           const MultiSimilarityParams& params) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("finetune_loss: lambda outside [0, 1]");
  ad::Tape tape;
  const ad::Var y = tape.constant(embeddings);
  FinetuneLoss out;
  out.continuous =
      tape.value(multi_similarity_on_tape(tape, cosine_similarity_on_tape(tape, y), labels, params))[0];
  out.binary = tape.value(
      multi_similarity_on_tape(tape, cosine_similarity_on_tape(tape, ad::sign_ste(tape, y)), labels, params))[0];
  out.total = (1.0 - lambda) * out.continuous + lambda * out.binary;
  return out;
}

}  // namespace tetra::train
