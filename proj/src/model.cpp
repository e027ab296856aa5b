// SPDX-License-Identifier: Apache-2.0
#include "tetra/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tetra/binary_io.hpp"
#include "tetra/error.hpp"
#include "tetra/nn.hpp"
#include "tetra/rng.hpp"

namespace tetra::model {

void ViTConfig::validate() const {
  if (layers == 0 || heads == 0 || dim == 0 || ffn_dim == 0 || patch == 0 || image_size == 0 || channels == 0 ||
      embed_dim == 0) {
    throw std::invalid_argument("ViTConfig: all dimensions must be positive");
  }
  if (dim % heads != 0) throw std::invalid_argument("ViTConfig: dim must be divisible by heads");
  if (image_size % patch != 0) throw std::invalid_argument("ViTConfig: patches must tile the image");
}

const Param& ModelWeights::at(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("missing parameter " + name);
  return it->second;
}

const Matrix& ModelWeights::matrix(const std::string& name) const {
  const auto* m = std::get_if<Matrix>(&at(name));
  if (!m) throw std::invalid_argument("parameter " + name + " is packed");
  return *m;
}

Matrix& ModelWeights::matrix(const std::string& name) {
  return const_cast<Matrix&>(static_cast<const ModelWeights&>(*this).matrix(name));
}

bool ModelWeights::is_quantized() const {
  for (const auto& [name, p] : params) {
    if (std::holds_alternative<kernels::PackedTernary>(p)) return true;
  }
  return false;
}

std::string block_prefix(std::size_t layer) { return "blocks." + std::to_string(layer) + "."; }

std::vector<std::string> param_names(const ViTConfig& config) {
  std::vector<std::string> names = {"patch_embed.weight", "patch_embed.bias", "cls_token", "pos_embed"};
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = block_prefix(l);
    for (const char* n : {"norm1.scale", "norm1.shift", "attn.wq", "attn.wk", "attn.wv", "attn.norm.scale",
                          "attn.norm.shift", "attn.wo", "norm2.scale", "norm2.shift", "ffn.w1", "ffn.b1",
                          "ffn.norm.scale", "ffn.norm.shift", "ffn.w2", "ffn.b2"}) {
      names.push_back(p + n);
    }
  }
  names.insert(names.end(), {"head.norm.scale", "head.norm.shift", "head.weight"});
  return names;
}

std::vector<std::string> projection_names(const ViTConfig& config) {
  std::vector<std::string> names;
  if (config.quantize_patch_embed) names.push_back("patch_embed.weight");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = block_prefix(l);
    for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"}) names.push_back(p + n);
  }
  return names;
}

bool is_projection(const ViTConfig& config, const std::string& name) {
  if (name == "patch_embed.weight") return config.quantize_patch_embed;
  if (!name.starts_with("blocks.")) return false;
  for (const char* suffix : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo", ".ffn.w1", ".ffn.w2"}) {
    if (name.ends_with(suffix)) return true;
  }
  return false;
}

std::pair<std::size_t, std::size_t> param_shape(const ViTConfig& c, const std::string& name) {
  if (name == "patch_embed.weight") return {c.dim, c.patch_dim()};
  if (name == "pos_embed") return {c.tokens(), c.dim};
  if (name == "head.weight") return {c.embed_dim, c.dim};
  if (name.ends_with("ffn.w1")) return {c.ffn_dim, c.dim};
  if (name.ends_with("ffn.w2")) return {c.dim, c.ffn_dim};
  if (name.ends_with("ffn.b1") || name.ends_with("ffn.norm.scale") || name.ends_with("ffn.norm.shift")) {
    return {1, c.ffn_dim};
  }
  if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv") || name.ends_with(".wo")) {
    return {c.dim, c.dim};
  }
  return {1, c.dim};
}

ModelWeights init_weights(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelWeights w;
  w.config = config;
  for (const std::string& name : param_names(config)) {
    const auto [rows, cols] = param_shape(config, name);
    Matrix m(rows, cols);
    if (name.ends_with(".scale")) {
      for (double& v : m.values()) v = 1.0;
    } else if (name.ends_with(".weight") || name.ends_with(".wq") || name.ends_with(".wk") ||
               name.ends_with(".wv") || name.ends_with(".wo") || name.ends_with(".w1") || name.ends_with(".w2")) {
      const double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
      for (double& v : m.values()) v = static_cast<float>(rng.normal(0.0, stddev));
    } else if (name == "cls_token" || name == "pos_embed") {
      for (double& v : m.values()) v = static_cast<float>(rng.normal(0.0, 0.02));
    }
    w.params.emplace(name, std::move(m));
  }
  return w;
}

ModelWeights quantize_model(const ModelWeights& weights) {
  ModelWeights out = weights;
  for (const std::string& name : projection_names(weights.config)) {
    Param& p = out.params.at(name);
    if (const auto* m = std::get_if<Matrix>(&p)) {
      kernels::PackedTernary packed = kernels::pack(quant::ternary_quantize(*m));
      // The file stores gamma as float32; keep memory and disk identical.
      packed.gamma = static_cast<float>(packed.gamma);
      p = std::move(packed);
    }
  }
  return out;
}

void round_to_f32(ModelWeights& weights) {
  for (auto& [name, p] : weights.params) {
    if (auto* m = std::get_if<Matrix>(&p)) {
      for (double& v : m->values()) v = static_cast<float>(v);
    } else {
      auto& packed = std::get<kernels::PackedTernary>(p);
      packed.gamma = static_cast<float>(packed.gamma);
    }
  }
}

Matrix patchify(const Tensor& image, const ViTConfig& c) {
  if (image.dims.size() != 3 || image.channels() != c.channels || image.height() != c.image_size ||
      image.width() != c.image_size) {
    std::string got;
    for (auto d : image.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
    throw std::invalid_argument("image dims " + got + " do not match model input " + std::to_string(c.channels) +
                                "x" + std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
  }
  const std::size_t g = c.grid();
  const std::size_t p = c.patch;
  Matrix out(c.num_patches(), c.patch_dim());
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t row = gy * g + gx;
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < c.channels; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) out(row, col++) = image.at(ch, gy * p + dy, gx * p + dx);
    }
  return out;
}

namespace {

// The block structure is written once against a backend: TapeBackend builds
// autodiff nodes (float and progressive modes), PackedBackend evaluates on
// plain matrices with the integer ternary kernels.

class TapeBackend {
 public:
  using Value = ad::Var;

  TapeBackend(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params, Mode mode)
      : t_(tape), w_(weights), p_(params), mode_(mode) {
    if (mode.kind == Mode::Kind::kQuantized) {
      throw std::invalid_argument("tape forward supports float and blend modes only");
    }
  }

  Value param(const std::string& name) const {
    const auto it = p_.find(name);
    if (it == p_.end()) throw std::invalid_argument("unbound parameter " + name);
    return it->second;
  }
  Value constant(Matrix m) { return t_.constant(std::move(m)); }

  Value proj(Value x, const std::string& name) {
    Value w = param(name);
    if (mode_.kind == Mode::Kind::kBlend && is_projection(w_.config, name)) {
      x = ad::act_fake_quant(t_, x, mode_.lambda);
      // Packed parameters are already ternary; only latent float weights get the blend.
      if (std::holds_alternative<Matrix>(w_.at(name))) w = ad::ternary_weight(t_, w, mode_.lambda);
    }
    return ad::matmul_nt(t_, x, w);
  }
  Value ln(Value x, const std::string& prefix) {
    return ad::layer_norm(t_, x, param(prefix + ".scale"), param(prefix + ".shift"));
  }
  Value bias(Value x, const std::string& name) { return ad::add_bias(t_, x, param(name)); }
  Value gelu(Value x) { return ad::gelu(t_, x); }
  Value softmax(Value x) { return ad::softmax_rows(t_, x); }
  Value matmul(Value a, Value b) { return ad::matmul(t_, a, b); }
  Value matmul_nt(Value a, Value b) { return ad::matmul_nt(t_, a, b); }
  Value scale(Value a, double c) { return ad::scale(t_, a, c); }
  Value add(Value a, Value b) { return ad::add(t_, a, b); }
  Value cols(Value a, std::size_t b, std::size_t e) { return ad::slice_cols(t_, a, b, e); }
  Value concat_cols(const std::vector<Value>& v) { return ad::concat_cols(t_, v); }
  Value concat_rows(const std::vector<Value>& v) { return ad::concat_rows(t_, v); }
  Value average(const std::vector<Value>& v) { return ad::average(t_, v); }

 private:
  ad::Tape& t_;
  const ModelWeights& w_;
  const ParamVars& p_;
  Mode mode_;
};

class PackedBackend {
 public:
  using Value = Matrix;

  PackedBackend(const ModelWeights& weights) : w_(weights) {}

  const Matrix& param(const std::string& name) const { return w_.matrix(name); }
  Value constant(Matrix m) { return m; }

  Value proj(const Value& x, const std::string& name) {
    const Param& p = w_.at(name);
    if (const auto* packed = std::get_if<kernels::PackedTernary>(&p)) {
      return kernels::ternary_linear(*packed, quant::act_quantize(x));
    }
    if (is_projection(w_.config, name)) throw std::invalid_argument("quantized forward: " + name + " is not packed");
    return tetra::matmul_nt(x, std::get<Matrix>(p));
  }
  Value ln(const Value& x, const std::string& prefix) {
    return nn::layer_norm(x, param(prefix + ".scale"), param(prefix + ".shift")).out;
  }
  Value bias(const Value& x, const std::string& name) { return nn::add_bias(x, param(name)); }
  Value gelu(const Value& x) { return nn::gelu(x); }
  Value softmax(const Value& x) { return nn::softmax_rows(x); }
  Value matmul(const Value& a, const Value& b) { return tetra::matmul(a, b); }
  Value matmul_nt(const Value& a, const Value& b) { return tetra::matmul_nt(a, b); }
  Value scale(Value a, double c) {
    for (double& v : a.values()) v *= c;
    return a;
  }
  Value add(Value a, const Value& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  }
  Value cols(const Value& a, std::size_t b, std::size_t e) {
    Matrix out(a.rows(), e - b);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = b; j < e; ++j) out(i, j - b) = a(i, j);
    return out;
  }
  Value concat_cols(const std::vector<Value>& v) {
    std::size_t total = 0;
    for (const auto& m : v) total += m.cols();
    Matrix out(v.front().rows(), total);
    std::size_t off = 0;
    for (const auto& m : v) {
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, off + j) = m(i, j);
      off += m.cols();
    }
    return out;
  }
  Value concat_rows(const std::vector<Value>& v) {
    std::vector<double> data;
    std::size_t rows = 0;
    for (const auto& m : v) {
      data.insert(data.end(), m.values().begin(), m.values().end());
      rows += m.rows();
    }
    return Matrix(rows, v.front().cols(), std::move(data));
  }
  Value average(const std::vector<Value>& v) {
    Matrix out = v.front();
    for (std::size_t k = 1; k < v.size(); ++k)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[k][i];
    for (double& x : out.values()) x /= static_cast<double>(v.size());
    return out;
  }

 private:
  const ModelWeights& w_;
};

template <class B>
typename B::Value attention_sublayer(B& b, const ViTConfig& c, const std::string& p, const typename B::Value& x,
                                     typename B::Value* attention) {
  using V = typename B::Value;
  const V q = b.proj(x, p + "attn.wq");
  const V k = b.proj(x, p + "attn.wk");
  const V v = b.proj(x, p + "attn.wv");
  const std::size_t dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<V> heads;
  std::vector<V> maps;
  for (std::size_t h = 0; h < c.heads; ++h) {
    const V qh = b.cols(q, h * dh, (h + 1) * dh);
    const V kh = b.cols(k, h * dh, (h + 1) * dh);
    const V vh = b.cols(v, h * dh, (h + 1) * dh);
    const V a = b.softmax(b.scale(b.matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(b.matmul(a, vh));
    maps.push_back(a);
  }
  if (attention) *attention = b.average(maps);
  return b.proj(b.ln(b.concat_cols(heads), p + "attn.norm"), p + "attn.wo");
}

template <class B>
typename B::Value ffn_sublayer(B& b, const std::string& p, const typename B::Value& x) {
  const auto hidden = b.gelu(b.bias(b.proj(x, p + "ffn.w1"), p + "ffn.b1"));
  return b.bias(b.proj(b.ln(hidden, p + "ffn.norm"), p + "ffn.w2"), p + "ffn.b2");
}

template <class B>
typename B::Value block(B& b, const ViTConfig& c, std::size_t layer, const typename B::Value& x,
                        typename B::Value* attention) {
  const std::string p = block_prefix(layer);
  const auto attn = attention_sublayer(b, c, p, b.ln(x, p + "norm1"), attention);
  const auto x1 = b.add(x, attn);
  return b.add(x1, ffn_sublayer(b, p, b.ln(x1, p + "norm2")));
}

template <class B>
typename B::Value embed(B& b, const ViTConfig& c, const Tensor& image) {
  const auto patches = b.constant(patchify(image, c));
  const auto x = b.bias(b.proj(patches, "patch_embed.weight"), "patch_embed.bias");
  return b.add(b.concat_rows({b.param("cls_token"), x}), b.param("pos_embed"));
}

void check_layer(const ModelWeights& w, std::size_t layer) {
  if (layer >= w.config.layers) throw std::invalid_argument("layer index out of range");
}

void check_tokens(const Matrix& x, const ViTConfig& c) {
  if (x.cols() != c.dim || x.rows() == 0) {
    throw std::invalid_argument("token matrix must be N x " + std::to_string(c.dim));
  }
}

const ModelWeights& packed_view(const ModelWeights& w, ModelWeights& storage) {
  bool complete = true;
  for (const auto& name : projection_names(w.config)) {
    if (!std::holds_alternative<kernels::PackedTernary>(w.at(name))) complete = false;
  }
  if (complete) return w;
  storage = quantize_model(w);
  return storage;
}

}  // namespace

ParamVars bind_params(ad::Tape& tape, const ModelWeights& weights,
                      const std::function<bool(const std::string&)>& trainable) {
  ParamVars vars;
  for (const auto& [name, p] : weights.params) {
    if (const auto* m = std::get_if<Matrix>(&p)) {
      vars.emplace(name, tape.leaf(*m, trainable && trainable(name)));
    } else {
      const auto t = kernels::unpack(std::get<kernels::PackedTernary>(p));
      vars.emplace(name, tape.constant(quant::ternary_dequantize(t)));
    }
  }
  return vars;
}

ad::Var embed_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params, const Tensor& image,
                      Mode mode) {
  TapeBackend b(tape, weights, params, mode);
  return embed(b, weights.config, image);
}

ad::Var block_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params, std::size_t layer,
                      ad::Var x, Mode mode, ad::Var* attention) {
  check_layer(weights, layer);
  check_tokens(tape.value(x), weights.config);
  TapeBackend b(tape, weights, params, mode);
  return block(b, weights.config, layer, x, attention);
}

TapeTrace forward_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params, const Tensor& image,
                          Mode mode) {
  TapeBackend b(tape, weights, params, mode);
  const ViTConfig& c = weights.config;
  TapeTrace trace;
  ad::Var x = embed(b, c, image);
  for (std::size_t l = 0; l < c.layers; ++l) {
    ad::Var a;
    x = block(b, c, l, x, &a);
    trace.attention.push_back(a);
  }
  trace.tokens_all = x;
  trace.cls = ad::slice_rows(tape, x, 0, 1);
  trace.tokens = ad::slice_rows(tape, x, 1, c.tokens());
  return trace;
}

ad::Var head_on_tape(ad::Tape& tape, const ParamVars& params, ad::Var cls) {
  const auto norm = ad::layer_norm(tape, cls, params.at("head.norm.scale"), params.at("head.norm.shift"));
  return ad::matmul_nt(tape, norm, params.at("head.weight"));
}

ForwardTrace vit_forward(const Tensor& image, const ModelWeights& weights, Mode mode) {
  const ViTConfig& c = weights.config;
  ForwardTrace trace;
  if (mode.kind == Mode::Kind::kQuantized) {
    ModelWeights storage;
    PackedBackend b(packed_view(weights, storage));
    Matrix x = embed(b, c, image);
    for (std::size_t l = 0; l < c.layers; ++l) {
      Matrix a;
      x = block(b, c, l, x, &a);
      trace.attention.push_back(std::move(a));
    }
    trace.cls = Matrix(1, c.dim, std::vector<double>(x.row(0).begin(), x.row(0).end()));
    trace.tokens = Matrix(c.num_patches(), c.dim, std::vector<double>(x.values().begin() + c.dim, x.values().end()));
    return trace;
  }
  ad::Tape tape;
  const ParamVars params = bind_params(tape, weights, {});
  const TapeTrace t = forward_on_tape(tape, weights, params, image, mode);
  trace.cls = tape.value(t.cls);
  trace.tokens = tape.value(t.tokens);
  for (ad::Var a : t.attention) trace.attention.push_back(tape.value(a));
  return trace;
}

AttentionOutput mhsa_forward(const Matrix& x, const ModelWeights& weights, std::size_t layer, Mode mode) {
  check_layer(weights, layer);
  check_tokens(x, weights.config);
  AttentionOutput r;
  if (mode.kind == Mode::Kind::kQuantized) {
    ModelWeights storage;
    PackedBackend b(packed_view(weights, storage));
    r.out = attention_sublayer(b, weights.config, block_prefix(layer), x, &r.attention);
    return r;
  }
  ad::Tape tape;
  const ParamVars params = bind_params(tape, weights, {});
  TapeBackend b(tape, weights, params, mode);
  ad::Var a;
  const ad::Var out = attention_sublayer(b, weights.config, block_prefix(layer), tape.constant(x), &a);
  r.out = tape.value(out);
  r.attention = tape.value(a);
  return r;
}

Matrix ffn_forward(const Matrix& x, const ModelWeights& weights, std::size_t layer, Mode mode) {
  check_layer(weights, layer);
  check_tokens(x, weights.config);
  if (mode.kind == Mode::Kind::kQuantized) {
    ModelWeights storage;
    PackedBackend b(packed_view(weights, storage));
    return ffn_sublayer(b, block_prefix(layer), x);
  }
  ad::Tape tape;
  const ParamVars params = bind_params(tape, weights, {});
  TapeBackend b(tape, weights, params, mode);
  return tape.value(ffn_sublayer(b, block_prefix(layer), tape.constant(x)));
}

Matrix head_forward(const Matrix& cls, const ModelWeights& weights) {
  const Matrix norm = nn::layer_norm(cls, weights.matrix("head.norm.scale"), weights.matrix("head.norm.shift")).out;
  return tetra::matmul_nt(norm, weights.matrix("head.weight"));
}

quant::BinaryEmbedding extract_embedding(const Tensor& image, const ModelWeights& weights, Mode mode) {
  const ForwardTrace trace = vit_forward(image, weights, mode);
  return quant::sign_binarize(head_forward(trace.cls, weights).values());
}

// --- weight file ---

namespace {

constexpr char kModelMagic[4] = {'T', 'T', 'R', 'A'};
constexpr std::size_t kMaxConfigValue = 1 << 16;

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelWeights& weights) {
  const ViTConfig& c = weights.config;
  io::ByteWriter w;
  w.text({kModelMagic, 4});
  w.u16(kModelFileVersion);
  for (std::size_t v : {c.layers, c.heads, c.dim, c.ffn_dim, c.patch, c.image_size, c.channels, c.embed_dim}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u8(c.quantize_patch_embed ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(weights.params.size()));
  for (const auto& [name, p] : weights.params) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    if (const auto* m = std::get_if<Matrix>(&p)) {
      w.u8(kDtypeF32);
      w.u8(2);
      w.u32(static_cast<std::uint32_t>(m->rows()));
      w.u32(static_cast<std::uint32_t>(m->cols()));
      for (double v : m->values()) w.f32(static_cast<float>(v));
    } else {
      const auto& packed = std::get<kernels::PackedTernary>(p);
      kernels::validate(packed);
      w.u8(kDtypeTernary);
      w.u8(2);
      w.u32(static_cast<std::uint32_t>(packed.rows));
      w.u32(static_cast<std::uint32_t>(packed.cols));
      w.f32(static_cast<float>(packed.gamma));
      w.bytes(packed.bytes);
    }
  }
  return w.take();
}

ModelWeights deserialize_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "TTRA");
  if (bytes.size() < 4 || r.text(4) != std::string(kModelMagic, 4)) r.fail("bad magic");
  const std::uint16_t version = r.u16();
  if (version != kModelFileVersion) r.fail("unsupported version " + std::to_string(version));
  ModelWeights w;
  ViTConfig& c = w.config;
  for (std::size_t* field : {&c.layers, &c.heads, &c.dim, &c.ffn_dim, &c.patch, &c.image_size, &c.channels,
                             &c.embed_dim}) {
    *field = r.u32();
    if (*field > kMaxConfigValue) r.fail("config value out of range");
  }
  const std::uint8_t flags = r.u8();
  if (flags > 1) r.fail("unknown config flags");
  c.quantize_patch_embed = flags & 1;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("invalid config: ") + e.what());
  }
  const std::vector<std::string> expected = param_names(c);
  const std::uint32_t count = r.u32();
  if (count != expected.size()) r.fail("expected " + std::to_string(expected.size()) + " tensors, found " +
                                       std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text(r.u16());
    if (std::find(expected.begin(), expected.end(), name) == expected.end()) r.fail("unknown tensor '" + name + "'");
    if (w.params.contains(name)) r.fail("duplicate tensor '" + name + "'");
    const std::uint8_t dtype = r.u8();
    const std::uint8_t ndim = r.u8();
    if (ndim != 2) r.fail("tensor '" + name + "' must be 2-D");
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    const auto shape = param_shape(c, name);
    if (rows != shape.first || cols != shape.second) r.fail("tensor '" + name + "' has the wrong shape");
    if (dtype == kDtypeF32) {
      if (rows * cols > r.remaining() / 4) r.fail("truncated");
      Matrix m(rows, cols);
      for (double& v : m.values()) v = r.f32();
      w.params.emplace(name, std::move(m));
    } else if (dtype == kDtypeTernary) {
      if (!is_projection(c, name)) r.fail("tensor '" + name + "' cannot be ternary");
      kernels::PackedTernary p;
      p.rows = rows;
      p.cols = cols;
      p.gamma = r.f32();
      if (!std::isfinite(p.gamma) || p.gamma < 0.0) r.fail("tensor '" + name + "' has an invalid scale");
      const auto payload = r.bytes(kernels::PackedTernary::bytes_for(rows * cols));
      p.bytes.assign(payload.begin(), payload.end());
      try {
        kernels::validate(p);
      } catch (const DataError& e) {
        r.fail("tensor '" + name + "': " + e.what());
      }
      w.params.emplace(name, std::move(p));
    } else {
      r.fail("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
  }
  r.expect_end();
  return w;
}

void save_model(const std::filesystem::path& path, const ModelWeights& weights) {
  io::write_file(path, serialize_model(weights));
}

ModelWeights load_model(const std::filesystem::path& path) {
  try {
    return deserialize_model(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace tetra::model
