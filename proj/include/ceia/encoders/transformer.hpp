#pragma once

#include <span>
#include <string>
#include <vector>

#include "ceia/encoders/checkpoint.hpp"
#include "ceia/encoders/lora.hpp"

namespace ceia::encoders {

enum class Pool { Cls, Mean };

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams init(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  LayerNormParams clone() const;
  void set_trainable(bool trainable);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Pre-norm block: x + Wo·MHSA(LN(x)), then x + MLP(LN(x)) with GELU.
struct TransformerBlock {
  LayerNormParams ln1;
  LoraLinear q, k, v, o;
  LayerNormParams ln2;
  LoraLinear fc1, fc2;
  std::size_t heads = 1;

  static TransformerBlock init(std::size_t dim, std::size_t heads, std::size_t mlp_dim, Rng& rng);
  // x: [B, T, E]
  Tensor forward(const Tensor& x) const;
  TransformerBlock clone() const;
  LoraLinear& linear(const std::string& name);
  const LoraLinear& linear(const std::string& name) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Names accepted by LoraConfig::targets.
const std::vector<std::string>& adaptable_linears();

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
  std::vector<std::string> targets{"q", "v"};
};

struct VitConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t output_dim = 32;
  Pool pool = Pool::Cls;

  void validate() const;
  std::size_t num_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
};

class VisionTransformer {
 public:
  VisionTransformer() = default;
  VisionTransformer(const VitConfig& config, Rng& rng);

  // pixels: [B, H, W, 3] normalised input -> [B, D] unit rows.
  Tensor encode(const Tensor& pixels) const;
  // Convenience: stacks H*W*3 vectors into a batch.
  Tensor encode(std::span<const std::vector<double>* const> images) const;

  const VitConfig& config() const { return config_; }
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> trainable_parameters() const;
  std::size_t adapter_parameter_count() const;

  VisionTransformer clone() const;
  void set_trainable(bool trainable);
  void attach_lora(const LoraConfig& lora, Rng& rng);
  void set_lora_enabled(bool on);
  VisionTransformer merged() const;

  std::vector<TransformerBlock>& blocks() { return blocks_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

  void save_to(Checkpoint& ckpt, const std::string& prefix) const;
  // Copies values by name; adapters present in the checkpoint are attached.
  void load_from(const Checkpoint& ckpt, const std::string& prefix);

 private:
  VitConfig config_;
  LoraLinear patch_embed_;
  Tensor cls_token_;  // [1, E]
  Tensor pos_embed_;  // [T, E]
  std::vector<TransformerBlock> blocks_;
  LayerNormParams ln_final_;
  LoraLinear proj_;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t max_tokens = 16;
  std::size_t output_dim = 32;

  void validate() const;
};

class TextTransformer {
 public:
  TextTransformer() = default;
  TextTransformer(const TextEncoderConfig& config, Rng& rng);

  // Each caption is a token-id sequence; returns [N, D] unit rows in input order.
  Tensor encode(std::span<const std::vector<int>> captions) const;

  const TextEncoderConfig& config() const { return config_; }
  std::vector<NamedTensor> parameters() const;
  TextTransformer clone() const;
  void set_trainable(bool trainable);

  void save_to(Checkpoint& ckpt, const std::string& prefix) const;
  void load_from(const Checkpoint& ckpt, const std::string& prefix);

 private:
  Tensor encode_same_length(const std::vector<const std::vector<int>*>& group) const;

  TextEncoderConfig config_;
  Tensor token_embed_;  // [V, E]
  Tensor pos_embed_;    // [max_tokens, E]
  std::vector<TransformerBlock> blocks_;
  LayerNormParams ln_final_;
  LoraLinear proj_;
};

// Copies every image-encoder weight into a new, frozen encoder and attaches
// zero-initialised adapters to the configured attention/MLP projections.
VisionTransformer init_event_encoder_from_image(const VisionTransformer& image_encoder,
                                                const LoraConfig& lora, Rng& rng);

// 2 * depth * r * (d + k) for square attention projections, in general the sum
// of r * (in + out) over adapted layers.
std::size_t expected_adapter_count(const VitConfig& config, const LoraConfig& lora);

// Architecture records stored next to the weights ("<prefix>config").
void put_config(Checkpoint& ckpt, const std::string& prefix, const VitConfig& config);
void put_config(Checkpoint& ckpt, const std::string& prefix, const TextEncoderConfig& config);
VitConfig get_vit_config(const Checkpoint& ckpt, const std::string& prefix);
TextEncoderConfig get_text_config(const Checkpoint& ckpt, const std::string& prefix);

Tensor stack_images(std::span<const std::vector<double>* const> images, std::size_t size);

}  // namespace ceia::encoders
