// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tetra/augment.hpp"
#include "tetra/dataset.hpp"
#include "tetra/losses.hpp"
#include "tetra/model.hpp"
#include "tetra/quantize.hpp"

namespace tetra::train {

enum class ScheduleKind { kProgressive, kAbrupt };

/// Everything a training run depends on besides the dataset. Read from and
/// written to flat "key = value" text; every key has a default.
struct TrainConfig {
  std::uint64_t seed = 0;
  model::ViTConfig model;

  // Teacher: float model trained briefly with the multi-similarity loss, then frozen.
  std::size_t teacher_steps = 40;
  double teacher_lr = 1e-3;
  std::size_t teacher_places = 8;  // two images per place per batch

  // Stage 1: distillation into the progressively ternarized student.
  std::size_t pretrain_steps = 60;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch = 8;
  double weight_decay = 0.0;
  ScheduleKind schedule = ScheduleKind::kProgressive;
  double pretrain_alpha = 0.0;  // 0 selects the default for the step count
  double pretrain_beta = 0.0;
  DistillWeights distill;
  std::size_t attn_layers = 5;
  AugmentPolicy augment;
  bool student_from_teacher = true;

  // Stage 2: binary fine-tuning of the last block and the head.
  std::size_t finetune_steps = 60;
  double finetune_lr = 4e-4;
  std::size_t finetune_places = 16;
  std::size_t finetune_images_per_place = 4;
  double finetune_alpha = 0.0;
  double finetune_beta = 0.0;
  bool unfreeze_last_block = true;
  MultiSimilarityParams ms;

  std::size_t eval_every = 0;  // 0: evaluate at the end of each stage only

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys and bad
/// values throw DataError naming the line.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Every key with its value, one per line, in a fixed order.
std::string format_train_config(const TrainConfig& config);

/// Sigmoid parameters with lambda(0) = 0.01 and lambda(0.6 * steps) = 0.99.
quant::QuantSchedule default_schedule(std::size_t steps);
/// Explicit alpha/beta when alpha > 0, otherwise default_schedule(steps).
quant::QuantSchedule resolve_schedule(double alpha, double beta, std::size_t steps);

/// Cosine decay from `base` to 0 over `steps`.
double cosine_lr(double base, std::size_t step, std::size_t steps);
/// Linear warm-up over the first 7.5% of steps, then x0.3 at 25%, 50% and 75%.
double step_decay_lr(double base, std::size_t step, std::size_t steps);

/// Adam with optional decoupled weight decay, keyed by parameter name.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  void step(model::ModelWeights& weights, const std::map<std::string, Matrix>& grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

/// One line of the metric log. Columns that do not apply to a stage are empty.
struct MetricRow {
  std::size_t step = 0;
  std::string stage;  // teacher, pretrain, finetune
  double lambda = 0.0;
  std::optional<double> loss_cls, loss_tok, loss_attn;
  double loss_total = 0.0;
  std::optional<double> recall_at_1;
};

/// `step,stage,lambda,loss_cls,loss_tok,loss_attn,loss_total,recall_at_1`, %.9g.
std::string format_metrics_csv(const std::vector<MetricRow>& rows);

using ProgressFn = std::function<void(const MetricRow&)>;

struct PretrainResult {
  model::ModelWeights teacher;
  model::ModelWeights student;  // latent float weights
  std::vector<MetricRow> rows;
};

/// Teacher training, then distillation with the progressive schedule. With
/// zero steps in both phases the student is the initialization.
PretrainResult train_pretrain(const TrainConfig& config, const data::Dataset& dataset,
                              const ProgressFn& progress = {});

struct FinetuneResult {
  model::ModelWeights latent;     // float weights, trainable form
  model::ModelWeights quantized;  // packed projections for deployment
  std::vector<MetricRow> rows;
};

/// Freezes all but the last block (or everything but the head) and trains
/// with the progressive binary multi-similarity loss.
FinetuneResult train_finetune(const TrainConfig& config, const data::Dataset& dataset,
                              const model::ModelWeights& student, const ProgressFn& progress = {});

/// Initial weights: the teacher is init_weights(model, seed); the student is
/// a copy of the teacher or, when configured, an independent init.
model::ModelWeights initial_teacher(const TrainConfig& config);
model::ModelWeights initial_student(const TrainConfig& config, const model::ModelWeights& teacher);

/// Embeds every database and query image and returns recall@k against the
/// dataset ground truth.
double evaluate_recall(const model::ModelWeights& weights, const data::Dataset& dataset, model::Mode mode,
                       std::size_t k = 1);
std::vector<quant::BinaryEmbedding> embed_images(const model::ModelWeights& weights, const std::vector<Tensor>& images,
                                                 model::Mode mode);

/// Mean distillation loss of the student on clean images.
double distill_loss(const model::ModelWeights& teacher, const model::ModelWeights& student,
                    const std::vector<Tensor>& images, model::Mode student_mode, const DistillWeights& weights,
                    std::size_t attn_layers = 5);

}  // namespace tetra::train
