// SPDX-License-Identifier: Apache-2.0
#include "tetra/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "tetra/binary_io.hpp"
#include "tetra/error.hpp"
#include "tetra/index.hpp"
#include "tetra/rng.hpp"

namespace tetra::train {
namespace {

// --- config fields ---------------------------------------------------------

std::string to_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string to_text(std::size_t v) { return std::to_string(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(ScheduleKind v) { return v == ScheduleKind::kProgressive ? "progressive" : "abrupt"; }

template <class T>
T from_text(const std::string& s);

template <>
std::size_t from_text<std::size_t>(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("expected an unsigned integer");
  return static_cast<std::size_t>(v);
}
template <>
double from_text<double>(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) throw std::invalid_argument("expected a finite number");
  return v;
}
template <>
bool from_text<bool>(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false");
}
template <>
ScheduleKind from_text<ScheduleKind>(const std::string& s) {
  if (s == "progressive") return ScheduleKind::kProgressive;
  if (s == "abrupt") return ScheduleKind::kAbrupt;
  throw std::invalid_argument("expected progressive or abrupt");
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <class Acc>
Field make_field(const char* key, Acc acc) {
  using T = std::remove_reference_t<decltype(acc(std::declval<TrainConfig&>()))>;
  return {key, [acc](const TrainConfig& c) { return to_text(acc(const_cast<TrainConfig&>(c))); },
          [acc](TrainConfig& c, const std::string& v) { acc(c) = from_text<T>(v); }};
}

#define TETRA_FIELD(key, member) make_field(key, [](TrainConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      TETRA_FIELD("seed", seed),
      TETRA_FIELD("model.layers", model.layers),
      TETRA_FIELD("model.heads", model.heads),
      TETRA_FIELD("model.dim", model.dim),
      TETRA_FIELD("model.ffn_dim", model.ffn_dim),
      TETRA_FIELD("model.patch", model.patch),
      TETRA_FIELD("model.image_size", model.image_size),
      TETRA_FIELD("model.channels", model.channels),
      TETRA_FIELD("model.embed_dim", model.embed_dim),
      TETRA_FIELD("model.quantize_patch_embed", model.quantize_patch_embed),
      TETRA_FIELD("teacher.steps", teacher_steps),
      TETRA_FIELD("teacher.lr", teacher_lr),
      TETRA_FIELD("teacher.places", teacher_places),
      TETRA_FIELD("pretrain.steps", pretrain_steps),
      TETRA_FIELD("pretrain.lr", pretrain_lr),
      TETRA_FIELD("pretrain.batch", pretrain_batch),
      TETRA_FIELD("pretrain.weight_decay", weight_decay),
      TETRA_FIELD("pretrain.schedule", schedule),
      TETRA_FIELD("pretrain.alpha", pretrain_alpha),
      TETRA_FIELD("pretrain.beta", pretrain_beta),
      TETRA_FIELD("pretrain.student_from_teacher", student_from_teacher),
      TETRA_FIELD("loss.cls", distill.cls),
      TETRA_FIELD("loss.tok", distill.tok),
      TETRA_FIELD("loss.attn", distill.attn),
      TETRA_FIELD("loss.attn_layers", attn_layers),
      TETRA_FIELD("augment.p_brightness", augment.p_brightness),
      TETRA_FIELD("augment.p_blur", augment.p_blur),
      TETRA_FIELD("augment.p_crop", augment.p_crop),
      TETRA_FIELD("augment.p_color", augment.p_color),
      TETRA_FIELD("augment.p_erase", augment.p_erase),
      TETRA_FIELD("augment.brightness", augment.brightness),
      TETRA_FIELD("augment.contrast", augment.contrast),
      TETRA_FIELD("augment.saturation", augment.saturation),
      TETRA_FIELD("augment.channel_gain", augment.channel_gain),
      TETRA_FIELD("finetune.steps", finetune_steps),
      TETRA_FIELD("finetune.lr", finetune_lr),
      TETRA_FIELD("finetune.places", finetune_places),
      TETRA_FIELD("finetune.images_per_place", finetune_images_per_place),
      TETRA_FIELD("finetune.alpha", finetune_alpha),
      TETRA_FIELD("finetune.beta", finetune_beta),
      TETRA_FIELD("finetune.unfreeze_last_block", unfreeze_last_block),
      TETRA_FIELD("ms.alpha", ms.alpha),
      TETRA_FIELD("ms.beta", ms.beta),
      TETRA_FIELD("ms.base", ms.base),
      TETRA_FIELD("ms.margin", ms.margin),
      TETRA_FIELD("ms.mining", ms.mining),
      TETRA_FIELD("eval.every", eval_every),
  };
  return table;
}

#undef TETRA_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// --- training helpers ------------------------------------------------------

using Grads = std::map<std::string, Matrix>;

/// Runs f(i) for every item on the OpenMP team; the first failure (by item) is rethrown.
template <class F>
void for_each_item(std::size_t n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Grads collect_grads(ad::Tape& tape, const model::ParamVars& vars) {
  Grads g;
  for (const auto& [name, v] : vars)
    if (tape.requires_grad(v)) g.emplace(name, tape.grad(v));
  return g;
}

/// Sums per-item gradients in item order, scaled by `scale`.
Grads reduce_grads(const std::vector<Grads>& items, double scale) {
  Grads total;
  for (const Grads& g : items) {
    for (const auto& [name, m] : g) {
      auto it = total.find(name);
      if (it == total.end()) it = total.emplace(name, Matrix(m.rows(), m.cols())).first;
      for (std::size_t i = 0; i < m.size(); ++i) it->second[i] += m[i];
    }
  }
  for (auto& [name, m] : total)
    for (double& v : m.values()) v *= scale;
  return total;
}

/// k distinct indices from [0, n) (all of them if k >= n), in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

/// Database indices grouped by place, for places with at least two images.
std::vector<std::vector<std::size_t>> places_with_pairs(const data::Dataset& ds) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_place;
  for (std::size_t i = 0; i < ds.database.size(); ++i) by_place[ds.database[i].place].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [place, idx] : by_place)
    if (idx.size() >= 2) out.push_back(std::move(idx));
  return out;
}

void check_finite(double loss, const char* stage, std::size_t step, const std::string& detail = {}) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(stage) + " step " + std::to_string(step) + ": non-finite loss" +
                       (detail.empty() ? "" : " (" + detail + ")"));
  }
}

bool eval_due(const TrainConfig& c, std::size_t step, std::size_t steps) {
  return step + 1 == steps || (c.eval_every > 0 && (step + 1) % c.eval_every == 0);
}

/// One multi-similarity step over per-item embedding tapes: forward each
/// item, score the batch on a shared tape, push the embedding gradients back.
struct EmbeddingBatch {
  std::vector<std::unique_ptr<ad::Tape>> tapes;
  std::vector<model::ParamVars> vars;
  std::vector<ad::Var> outputs;

  explicit EmbeddingBatch(std::size_t n) : tapes(n), vars(n), outputs(n) {}

  Matrix stacked() const {
    const std::size_t d = tapes[0]->value(outputs[0]).cols();
    Matrix y(tapes.size(), d);
    for (std::size_t i = 0; i < tapes.size(); ++i) {
      const Matrix& row = tapes[i]->value(outputs[i]);
      for (std::size_t j = 0; j < d; ++j) y(i, j) = row(0, j);
    }
    return y;
  }

  Grads backward(const Matrix& dy) {
    std::vector<Grads> per(tapes.size());
    for_each_item(tapes.size(), [&](std::size_t i) {
      Matrix seed(1, dy.cols());
      for (std::size_t j = 0; j < dy.cols(); ++j) seed(0, j) = dy(i, j);
      tapes[i]->backward(outputs[i], seed);
      per[i] = collect_grads(*tapes[i], vars[i]);
    });
    return reduce_grads(per, 1.0);
  }
};

model::ModelWeights deployable(const model::ModelWeights& w, model::Mode mode) {
  if (mode.kind == model::Mode::Kind::kQuantized && !w.is_quantized()) return model::quantize_model(w);
  return w;
}

}  // namespace

// --- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  auto probability = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  };
  positive(teacher_lr, "teacher.lr");
  positive(pretrain_lr, "pretrain.lr");
  positive(finetune_lr, "finetune.lr");
  if (teacher_places == 0 || pretrain_batch == 0 || finetune_places == 0) {
    throw std::invalid_argument("batch sizes must be positive");
  }
  if (finetune_images_per_place < 2) throw std::invalid_argument("finetune.images_per_place must be at least 2");
  if (attn_layers == 0) throw std::invalid_argument("loss.attn_layers must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("pretrain.weight_decay must be non-negative");
  if (distill.cls < 0.0 || distill.tok < 0.0 || distill.attn < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (pretrain_alpha < 0.0 || finetune_alpha < 0.0) throw std::invalid_argument("schedule alpha must be non-negative");
  for (const double p : {augment.p_brightness, augment.p_blur, augment.p_crop, augment.p_color, augment.p_erase}) {
    probability(p, "augment probabilities");
  }
  positive(ms.alpha, "ms.alpha");
  positive(ms.beta, "ms.beta");
  if (ms.margin < 0.0) throw std::invalid_argument("ms.margin must be non-negative");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw DataError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const std::invalid_argument& e) {
      throw DataError("config line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) { return parse_train_config(io::read_text(path)); }

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

// --- schedules -----------------------------------------------------------------

quant::QuantSchedule default_schedule(std::size_t steps) {
  const double beta = std::log(99.0);
  const double horizon = 0.6 * static_cast<double>(std::max<std::size_t>(steps, 1));
  return {2.0 * beta / horizon, beta, 0};
}

quant::QuantSchedule resolve_schedule(double alpha, double beta, std::size_t steps) {
  if (alpha > 0.0) return {alpha, beta, 0};
  return default_schedule(steps);
}

double cosine_lr(double base, std::size_t step, std::size_t steps) {
  if (steps == 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)));
}

double step_decay_lr(double base, std::size_t step, std::size_t steps) {
  if (steps == 0) return base;
  const double t = static_cast<double>(step);
  const double n = static_cast<double>(steps);
  const double warmup = std::ceil(0.075 * n);
  if (t < warmup) return base * (t + 1.0) / warmup;
  double lr = base;
  for (const double f : {0.25, 0.5, 0.75})
    if (t >= f * n) lr *= 0.3;
  return lr;
}

void Adam::step(model::ModelWeights& weights, const std::map<std::string, Matrix>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& w = weights.matrix(name);
    if (!w.same_shape(g)) throw std::invalid_argument("Adam: gradient shape mismatch for " + name);
    auto mit = m_.try_emplace(name, g.rows(), g.cols()).first;
    auto vit = v_.try_emplace(name, g.rows(), g.cols()).first;
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      w[i] -= lr * (update + weight_decay_ * w[i]);
    }
  }
}

std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,stage,lambda,loss_cls,loss_tok,loss_attn,loss_total,recall_at_1\n";
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (const MetricRow& r : rows) {
    out += std::to_string(r.step) + "," + r.stage + "," + num(r.lambda) + "," + opt(r.loss_cls) + "," +
           opt(r.loss_tok) + "," + opt(r.loss_attn) + "," + num(r.loss_total) + "," + opt(r.recall_at_1) + "\n";
  }
  return out;
}

// --- evaluation --------------------------------------------------------------------

std::vector<quant::BinaryEmbedding> embed_images(const model::ModelWeights& weights, const std::vector<Tensor>& images,
                                                 model::Mode mode) {
  const model::ModelWeights w = deployable(weights, mode);
  std::vector<quant::BinaryEmbedding> out(images.size());
  for_each_item(images.size(), [&](std::size_t i) { out[i] = model::extract_embedding(images[i], w, mode); });
  return out;
}

double evaluate_recall(const model::ModelWeights& weights, const data::Dataset& ds, model::Mode mode, std::size_t k) {
  if (ds.database.empty() || ds.queries.empty()) throw std::invalid_argument("evaluate_recall: empty dataset");
  const auto db = embed_images(weights, ds.database_images, mode);
  const auto qs = embed_images(weights, ds.query_images, mode);
  index::BinaryIndex idx(weights.config.embed_dim);
  for (std::size_t i = 0; i < db.size(); ++i) idx.add(ds.database[i].id, db[i]);
  std::map<std::uint64_t, index::SearchResult> results;
  for (std::size_t i = 0; i < qs.size(); ++i) results[ds.queries[i].id] = idx.search(qs[i], k);
  return index::recall_at_k(results, ds.ground_truth, k);
}

double distill_loss(const model::ModelWeights& teacher, const model::ModelWeights& student,
                    const std::vector<Tensor>& images, model::Mode student_mode, const DistillWeights& weights,
                    std::size_t attn_layers) {
  if (images.empty()) throw std::invalid_argument("distill_loss: no images");
  const model::ModelWeights s = deployable(student, student_mode);
  std::vector<double> losses(images.size());
  for_each_item(images.size(), [&](std::size_t i) {
    const auto t = model::vit_forward(images[i], teacher, model::Mode::full_precision());
    const auto st = model::vit_forward(images[i], s, student_mode);
    losses[i] = pretrain_loss(t, st, weights, attn_layers).total();
  });
  double total = 0.0;
  for (const double l : losses) total += l;
  return total / static_cast<double>(images.size());
}

// --- stages -------------------------------------------------------------------------

model::ModelWeights initial_teacher(const TrainConfig& config) { return model::init_weights(config.model, config.seed); }

model::ModelWeights initial_student(const TrainConfig& config, const model::ModelWeights& teacher) {
  if (config.student_from_teacher) return teacher;
  return model::init_weights(config.model, config.seed ^ 0x5EEDULL);
}

namespace {

void train_teacher(const TrainConfig& c, const data::Dataset& ds, model::ModelWeights& teacher,
                   std::vector<MetricRow>& rows, const ProgressFn& progress) {
  if (c.teacher_steps == 0) return;
  const auto places = places_with_pairs(ds);
  if (places.empty()) throw DataError("teacher training needs a place with at least two database images");
  Rng rng = Rng(c.seed).fork(1);
  Adam adam(0.9, 0.999, 1e-8, c.weight_decay);
  for (std::size_t step = 0; step < c.teacher_steps; ++step) {
    std::vector<std::size_t> items;
    std::vector<int> labels;
    for (const std::size_t p : sample_without_replacement(rng, places.size(), c.teacher_places)) {
      for (const std::size_t j : sample_without_replacement(rng, places[p].size(), 2)) {
        items.push_back(places[p][j]);
        labels.push_back(static_cast<int>(p));
      }
    }
    EmbeddingBatch batch(items.size());
    for_each_item(items.size(), [&](std::size_t i) {
      batch.tapes[i] = std::make_unique<ad::Tape>();
      ad::Tape& tape = *batch.tapes[i];
      batch.vars[i] = model::bind_params(tape, teacher, [](const std::string&) { return true; });
      const auto trace = model::forward_on_tape(tape, teacher, batch.vars[i], ds.database_images[items[i]],
                                                model::Mode::full_precision());
      batch.outputs[i] = model::head_on_tape(tape, batch.vars[i], trace.cls);
    });
    ad::Tape head;
    const ad::Var y = head.leaf(batch.stacked());
    const ad::Var loss = multi_similarity_on_tape(head, cosine_similarity_on_tape(head, y), labels, c.ms);
    const double value = head.value(loss)[0];
    check_finite(value, "teacher", step);
    head.backward(loss);
    adam.step(teacher, batch.backward(head.grad(y)), cosine_lr(c.teacher_lr, step, c.teacher_steps));

    MetricRow row{step, "teacher", 0.0, {}, {}, {}, value, {}};
    if (eval_due(c, step, c.teacher_steps)) {
      row.recall_at_1 = evaluate_recall(teacher, ds, model::Mode::full_precision());
    }
    if (progress) progress(row);
    rows.push_back(row);
  }
}

}  // namespace

PretrainResult train_pretrain(const TrainConfig& c, const data::Dataset& ds, const ProgressFn& progress) {
  c.validate();
  if (ds.database.empty()) throw DataError("dataset has no database images");
  PretrainResult r;
  r.teacher = initial_teacher(c);
  train_teacher(c, ds, r.teacher, r.rows, progress);
  r.student = initial_student(c, r.teacher);
  if (c.pretrain_steps == 0) return r;

  // The teacher is frozen: its traces on the clean images are computed once.
  std::vector<model::ForwardTrace> traces(ds.database_images.size());
  for_each_item(traces.size(), [&](std::size_t i) {
    traces[i] = model::vit_forward(ds.database_images[i], r.teacher, model::Mode::full_precision());
  });

  const quant::QuantSchedule sched = resolve_schedule(c.pretrain_alpha, c.pretrain_beta, c.pretrain_steps);
  const auto trainable = [](const std::string& name) { return name.rfind("head.", 0) != 0; };
  Rng rng = Rng(c.seed).fork(2);
  Adam adam(0.9, 0.999, 1e-8, c.weight_decay);
  for (std::size_t step = 0; step < c.pretrain_steps; ++step) {
    const double lambda = c.schedule == ScheduleKind::kAbrupt
                              ? 1.0
                              : quant::lambda_schedule({sched.alpha, sched.beta, step});
    const model::Mode mode = model::Mode::blend(lambda);
    const auto items = sample_without_replacement(rng, ds.database_images.size(), c.pretrain_batch);
    std::vector<std::uint64_t> aug_seeds(items.size());
    for (auto& s : aug_seeds) s = rng.next();

    std::vector<Grads> grads(items.size());
    std::vector<LossBreakdown> losses(items.size());
    for_each_item(items.size(), [&](std::size_t i) {
      ad::Tape tape;
      const auto vars = model::bind_params(tape, r.student, trainable);
      const Tensor x = augment(ds.database_images[items[i]], aug_seeds[i], c.augment);
      const auto st = model::forward_on_tape(tape, r.student, vars, x, mode);
      const auto nodes = pretrain_loss_on_tape(tape, traces[items[i]], st, c.distill, c.attn_layers);
      losses[i] = {tape.value(nodes.cls)[0], tape.value(nodes.tok)[0], tape.value(nodes.attn)[0]};
      tape.backward(nodes.total);
      grads[i] = collect_grads(tape, vars);
    });
    LossBreakdown mean;
    for (const auto& l : losses) {
      mean.cls += l.cls;
      mean.tok += l.tok;
      mean.attn += l.attn;
    }
    const double inv = 1.0 / static_cast<double>(items.size());
    mean.cls *= inv;
    mean.tok *= inv;
    mean.attn *= inv;
    check_finite(mean.total(), "pretrain", step,
                 "cls=" + to_text(mean.cls) + " tok=" + to_text(mean.tok) + " attn=" + to_text(mean.attn));
    adam.step(r.student, reduce_grads(grads, inv), cosine_lr(c.pretrain_lr, step, c.pretrain_steps));

    MetricRow row{step, "pretrain", lambda, mean.cls, mean.tok, mean.attn, mean.total(), {}};
    if (eval_due(c, step, c.pretrain_steps)) row.recall_at_1 = evaluate_recall(r.student, ds, model::Mode::quantized());
    if (progress) progress(row);
    r.rows.push_back(row);
  }
  return r;
}

FinetuneResult train_finetune(const TrainConfig& c, const data::Dataset& ds, const model::ModelWeights& student,
                              const ProgressFn& progress) {
  c.validate();
  if (student.is_quantized()) throw std::invalid_argument("train_finetune: needs latent float weights");
  if (!(student.config == c.model)) throw std::invalid_argument("train_finetune: checkpoint config differs from training config");
  FinetuneResult r;
  r.latent = student;
  const model::ViTConfig& mc = student.config;
  const std::size_t last = mc.layers - 1;
  const std::string last_prefix = model::block_prefix(last);
  const auto trainable = [&](const std::string& name) {
    return name.rfind("head.", 0) == 0 || (c.unfreeze_last_block && name.rfind(last_prefix, 0) == 0);
  };

  if (c.finetune_steps > 0) {
    const auto places = places_with_pairs(ds);
    if (places.empty()) throw DataError("fine-tuning needs a place with at least two database images");

    // Frozen, fully ternary prefix: cache what the trainable part sees.
    const model::Mode frozen_mode = model::Mode::blend(1.0);
    std::vector<Matrix> cache(ds.database_images.size());
    for_each_item(cache.size(), [&](std::size_t i) {
      ad::Tape tape;
      const auto vars = model::bind_params(tape, student, {});
      ad::Var x = model::embed_on_tape(tape, student, vars, ds.database_images[i], frozen_mode);
      const std::size_t depth = c.unfreeze_last_block ? last : mc.layers;
      for (std::size_t l = 0; l < depth; ++l) x = model::block_on_tape(tape, student, vars, l, x, frozen_mode, nullptr);
      cache[i] = c.unfreeze_last_block ? tape.value(x) : tape.value(ad::slice_rows(tape, x, 0, 1));
    });

    const quant::QuantSchedule sched = resolve_schedule(c.finetune_alpha, c.finetune_beta, c.finetune_steps);
    Rng rng = Rng(c.seed).fork(3);
    Adam adam;
    for (std::size_t step = 0; step < c.finetune_steps; ++step) {
      const double lambda = quant::lambda_schedule({sched.alpha, sched.beta, step});
      std::vector<std::size_t> items;
      std::vector<int> labels;
      for (const std::size_t p : sample_without_replacement(rng, places.size(), c.finetune_places)) {
        for (const std::size_t j : sample_without_replacement(rng, places[p].size(), c.finetune_images_per_place)) {
          items.push_back(places[p][j]);
          labels.push_back(static_cast<int>(p));
        }
      }
      EmbeddingBatch batch(items.size());
      for_each_item(items.size(), [&](std::size_t i) {
        batch.tapes[i] = std::make_unique<ad::Tape>();
        ad::Tape& tape = *batch.tapes[i];
        model::ParamVars& vars = batch.vars[i];
        for (const auto& [name, p] : r.latent.params)
          if (trainable(name)) vars.emplace(name, tape.leaf(std::get<Matrix>(p), true));
        ad::Var cls = tape.constant(cache[items[i]]);
        if (c.unfreeze_last_block) {
          const ad::Var x = model::block_on_tape(tape, r.latent, vars, last, cls, frozen_mode, nullptr);
          cls = ad::slice_rows(tape, x, 0, 1);
        }
        batch.outputs[i] = model::head_on_tape(tape, vars, cls);
      });
      ad::Tape head;
      const ad::Var y = head.leaf(batch.stacked());
      const ad::Var loss = finetune_loss_on_tape(head, y, labels, lambda, c.ms);
      const double value = head.value(loss)[0];
      check_finite(value, "finetune", step);
      head.backward(loss);
      adam.step(r.latent, batch.backward(head.grad(y)), step_decay_lr(c.finetune_lr, step, c.finetune_steps));

      MetricRow row{step, "finetune", lambda, {}, {}, {}, value, {}};
      if (eval_due(c, step, c.finetune_steps)) row.recall_at_1 = evaluate_recall(r.latent, ds, model::Mode::quantized());
      if (progress) progress(row);
      r.rows.push_back(row);
    }
  }
  r.quantized = model::quantize_model(r.latent);
  return r;
}

}  // namespace tetra::train
