#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace trust {

/// Routes token features of encoder block `block` (1-based) into decoder stage `stage`
/// (0-based). A disabled connection feeds zeros, so parameter shapes do not depend on it.
struct SkipConnection {
  std::size_t block = 0;
  std::size_t stage = 0;
  bool enabled = true;
};

struct TrustConfig {
  std::size_t image_size = 32;
  /// Side of the square observation image; 0 means image_size.
  std::size_t input_size = 0;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t encoder_depth = 4;
  std::size_t mlp_ratio = 4;
  std::size_t pool_grid = 4;
  /// Channels per decoder stage; stage 0 runs at pool_grid, each later stage doubles the side.
  std::vector<std::size_t> decoder_channels{64, 32, 16, 8};
  std::vector<SkipConnection> skips{{4, 1, true}, {2, 3, true}};
  std::uint64_t seed = 0;

  std::size_t observation_size() const { return input_size == 0 ? image_size : input_size; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t token_grid() const { return observation_size() / patch_size; }
  std::size_t tokens() const { return token_grid() * token_grid(); }
  /// Throws ParameterError describing the first violated constraint.
  void validate() const;
};

struct UNetConfig {
  std::size_t image_size = 32;
  std::size_t base_channels = 8;
  std::uint64_t seed = 0;
  void validate() const;
};

enum class ModelKind { Trust, UNet };

struct ModelSpec {
  ModelKind kind = ModelKind::Trust;
  TrustConfig trust;
  UNetConfig unet;

  std::size_t image_size() const { return kind == ModelKind::Trust ? trust.image_size : unet.image_size; }
  std::size_t observation_size() const {
    return kind == ModelKind::Trust ? trust.observation_size() : unet.image_size;
  }
  std::uint64_t seed() const { return kind == ModelKind::Trust ? trust.seed : unet.seed; }
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

void to_json(nlohmann::json& j, const SkipConnection& s);
void from_json(const nlohmann::json& j, SkipConnection& s);
void to_json(nlohmann::json& j, const TrustConfig& c);
void from_json(const nlohmann::json& j, TrustConfig& c);
void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);
void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

/// Named parameter tensors in a fixed insertion order.
class ModelParams {
 public:
  void add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t total_count() const;
  bool all_finite() const;
  /// Name of the first tensor holding a NaN/Inf, or empty.
  std::string first_non_finite() const;
  void zero_grad();
  ModelParams clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Expected parameter names and shapes for a model, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec);
/// Seeded initialization: transformer weights N(0, 0.02), conv kernels He-normal,
/// biases and shifts 0, layernorm scales 1. All tensors require gradients.
ModelParams init_params(const ModelSpec& spec);
/// Throws ContractError naming the first missing or mis-shaped tensor.
void validate_params(const ModelSpec& spec, const ModelParams& params);

struct ForwardTrace {
  /// Post-softmax attention per block and head, [tokens x tokens].
  std::vector<Tensor> attention;
  /// Token features after each encoder block, [tokens x embed_dim].
  std::vector<Tensor> block_outputs;
  /// Decoder feature maps after each stage.
  std::vector<Tensor> decoder_stages;
};

/// [S, S] observation -> [image_size, image_size] reconstruction in (0, 1).
Tensor forward_trust(const ModelParams& params, const TrustConfig& config, const Tensor& observation,
                     ForwardTrace* trace = nullptr);
Tensor forward_unet(const ModelParams& params, const UNetConfig& config, const Tensor& observation);
Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& observation);

/// [S, S] image -> [tokens, patch_size^2], tokens in row-major grid order.
Tensor patchify(const Tensor& image, std::size_t patch_size);

enum class GramMode {
  Learned,   // block-1 projections of the embedded tokens
  Identity,  // raw pixel patches as both queries and keys
};

/// Pre-softmax scaled token inner products Q K^T / sqrt(d_k) at encoder block 1.
Tensor token_gram(const TrustConfig& config, const ModelParams& params, const Tensor& image,
                  GramMode mode = GramMode::Learned);
/// tokens tokens^T / sqrt(d_k) for an explicit [T, D] token matrix.
Tensor token_gram_of(const Tensor& tokens, std::size_t head_dim);

struct ModelCost {
  std::size_t parameters = 0;
  std::size_t multiply_adds = 0;  // per forward pass
};

/// Parameter total summed over parameter_layout(), plus a multiply-add estimate.
ModelCost param_count(const ModelSpec& spec);

}  // namespace trust
