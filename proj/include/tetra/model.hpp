// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tetra/autodiff.hpp"
#include "tetra/kernels.hpp"
#include "tetra/matrix.hpp"
#include "tetra/quantize.hpp"
#include "tetra/tensor_io.hpp"

namespace tetra::model {

struct ViTConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t patch = 8;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t embed_dim = 256;  // aggregated descriptor bits
  bool quantize_patch_embed = false;

  std::size_t grid() const noexcept { return image_size / patch; }
  std::size_t num_patches() const noexcept { return grid() * grid(); }
  std::size_t tokens() const noexcept { return num_patches() + 1; }
  std::size_t head_dim() const noexcept { return dim / heads; }
  std::size_t patch_dim() const noexcept { return channels * patch * patch; }
  /// Throws std::invalid_argument unless all sizes are positive, heads divide dim and patches tile the image.
  void validate() const;
  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// float: full precision. blend(lambda): progressive weights and activations.
/// quantized: packed ternary projections with int8 activations on the integer kernels.
struct Mode {
  enum class Kind { kFloat, kBlend, kQuantized };
  Kind kind = Kind::kFloat;
  double lambda = 0.0;

  static Mode full_precision() { return {Kind::kFloat, 0.0}; }
  static Mode blend(double lambda) { return {Kind::kBlend, lambda}; }
  static Mode quantized() { return {Kind::kQuantized, 1.0}; }
};

using Param = std::variant<Matrix, kernels::PackedTernary>;

/// Named parameter table. Projection weights are stored out×in.
struct ModelWeights {
  ViTConfig config;
  std::map<std::string, Param> params;

  const Param& at(const std::string& name) const;
  /// Throws if the parameter is missing or packed.
  const Matrix& matrix(const std::string& name) const;
  Matrix& matrix(const std::string& name);
  /// True if any projection is stored packed.
  bool is_quantized() const;
};

/// Every parameter name for a config, in file order.
std::vector<std::string> param_names(const ViTConfig& config);
/// The names subject to ternarization.
std::vector<std::string> projection_names(const ViTConfig& config);
bool is_projection(const ViTConfig& config, const std::string& name);
std::string block_prefix(std::size_t layer);
/// rows×cols each parameter must have.
std::pair<std::size_t, std::size_t> param_shape(const ViTConfig& config, const std::string& name);

/// Random init; every value is exactly representable as float32.
ModelWeights init_weights(const ViTConfig& config, std::uint64_t seed);
/// Copy with every projection ternarized and packed.
ModelWeights quantize_model(const ModelWeights& weights);
/// Rounds float parameters to float32 precision (what a save/load round trip keeps).
void round_to_f32(ModelWeights& weights);

struct ForwardTrace {
  Matrix cls;                     // 1×dim
  Matrix tokens;                  // patches×dim
  std::vector<Matrix> attention;  // per layer, tokens×tokens, mean over heads
};

/// [C, H, W] image to patches×(C·p·p) rows, channel-major within a patch.
Matrix patchify(const Tensor& image, const ViTConfig& config);

ForwardTrace vit_forward(const Tensor& image, const ModelWeights& weights, Mode mode);

struct AttentionOutput {
  Matrix out;
  Matrix attention;
};

/// Heads, concat, LayerNorm, output projection for block `layer`. X is N×dim.
AttentionOutput mhsa_forward(const Matrix& x, const ModelWeights& weights, std::size_t layer, Mode mode);
/// LN(GELU(X W1 + b1)) W2 + b2 for block `layer`.
Matrix ffn_forward(const Matrix& x, const ModelWeights& weights, std::size_t layer, Mode mode);

/// Aggregation head: LayerNorm of the class token, then a float linear map to embed_dim.
Matrix head_forward(const Matrix& cls, const ModelWeights& weights);
/// Forward + head + sign.
quant::BinaryEmbedding extract_embedding(const Tensor& image, const ModelWeights& weights, Mode mode);

// --- differentiable path -------------------------------------------------

using ParamVars = std::map<std::string, ad::Var>;

/// Puts every parameter on the tape. Float parameters for which `trainable`
/// returns true become gradient leaves; everything else is constant. Packed
/// parameters are bound as constants holding their dequantized values.
ParamVars bind_params(ad::Tape& tape, const ModelWeights& weights,
                      const std::function<bool(const std::string&)>& trainable);

struct TapeTrace {
  ad::Var tokens_all;  // (patches+1)×dim
  ad::Var cls;
  ad::Var tokens;
  std::vector<ad::Var> attention;
};

/// Patch embedding, class token and positions: the block-0 input.
ad::Var embed_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params,
                      const Tensor& image, Mode mode);
/// One transformer block with residuals; writes the mean attention map to `attention`.
ad::Var block_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params, std::size_t layer,
                      ad::Var x, Mode mode, ad::Var* attention);
/// kFloat or kBlend only.
TapeTrace forward_on_tape(ad::Tape& tape, const ModelWeights& weights, const ParamVars& params,
                          const Tensor& image, Mode mode);
ad::Var head_on_tape(ad::Tape& tape, const ParamVars& params, ad::Var cls);

// --- weight file ---------------------------------------------------------
//
// "TTRA", u16 version, config (8 × u32, u8 flags), u32 tensor count, then per
// tensor: u16 name length, name, u8 dtype (0 f32, 1 ternary-packed), u8 ndim,
// u32 dims, f32 gamma (ternary only), payload. Little-endian.

inline constexpr std::uint16_t kModelFileVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeTernary = 1;

std::vector<std::uint8_t> serialize_model(const ModelWeights& weights);
/// Throws DataError ("bad magic", "unsupported version", "truncated", corrupt codes, ...).
ModelWeights deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_model(const std::filesystem::path& path);

}  // namespace tetra::model
