#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mammut/data/tokenizer.hpp"
#include "mammut/losses/losses.hpp"
#include "mammut/model/config.hpp"
#include "mammut/model/layers.hpp"

namespace mammut {

/// Self-attention mask [B, T, T]. Causal: lower triangle AND key validity;
/// bidirectional: key validity only.
Mask build_attention_mask(MaskingMode mode, const data::TokenBatch& tokens);

struct ImageEncoding {
  Tensor tokens;  // encoder output [B, P, vision_dim]
  Tensor visual;  // projected tokens [B, P, decoder_dim]
  Tensor v;       // unit-norm global embedding [B, decoder_dim]
};

/// Vision encoder, visual projection and a single text decoder shared by the
/// contrastive pass and the generative pass.
class Mammut {
 public:
  explicit Mammut(MammutConfig config);

  const MammutConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const Temperature& temperature() const { return temperature_; }

  /// Learned [G, G, vision_dim] positional grid.
  const Tensor& positional_grid() const { return pos_grid_; }

  /// Patch tokens [B, P, 3p^2] plus positions from `pos_grid` ([G, G, d] or
  /// any grid with P cells).
  ImageEncoding encode_image(const Tensor& patches, const Tensor& pos_grid) const;
  ImageEncoding encode_image(const Tensor& patches) const { return encode_image(patches, pos_grid_); }
  /// Linear patch embedding without positions: [B, P, 3p^2] -> [B, P, vision_dim].
  Tensor embed_patches(const Tensor& patches) const;
  /// Runs the encoder on already embedded tokens [B, N, vision_dim].
  ImageEncoding encode_tokens(const Tensor& embedded) const;
  Tensor project_visual(const Tensor& tokens) const { return projection_(tokens); }

  /// Text embedding l [B, decoder_dim]: no cross-attention, pooled over
  /// valid positions.
  Tensor contrastive_pass(const data::TokenBatch& tokens) const;
  /// Logits [B, T, vocab]; position t scores the token at t + 1.
  Tensor generative_pass(const data::TokenBatch& tokens, const Tensor& visual) const;
  /// Final decoder features [B, T, D]. Cross-attention runs only when
  /// `visual` is given.
  Tensor decode(const data::TokenBatch& tokens, MaskingMode mode, const Tensor* visual) const;

  /// Greedy decoding over the full vocabulary. Stops at eos or when the
  /// sequence holds `max_len` tokens; returns the continuation without eos.
  std::vector<std::int32_t> generate(const Tensor& patches, std::span<const std::int32_t> prompt,
                                     std::size_t max_len) const;
  /// Batched greedy decoding for precomputed projected visual tokens.
  std::vector<std::vector<std::int32_t>> generate_batch(const Tensor& visual,
                                                        const std::vector<std::vector<std::int32_t>>& prompts,
                                                        std::size_t max_len) const;

  /// Parameters the contrastive pass and the generative pass may touch.
  std::vector<std::string> decoder_parameter_names(bool include_cross_attention) const;

 private:
  Tensor pool_text(const Tensor& features, const data::TokenBatch& tokens) const;
  Tensor finish_image(const Tensor& encoded) const;

  MammutConfig config_;
  ParameterStore store_;

  Linear patch_embed_;
  Tensor pos_grid_;
  std::vector<TransformerBlock> encoder_;
  LayerNorm encoder_norm_;
  Linear projection_;

  Tensor token_embed_;
  Tensor text_pos_;
  std::vector<TransformerBlock> decoder_;
  std::vector<std::optional<CrossAttentionBlock>> cross_;
  LayerNorm decoder_norm_;
  Tensor output_weight_;  // [D, V]; empty when tied
  Tensor output_bias_;

  Temperature temperature_;

  std::optional<Linear> image_head_, text_head_;
  std::optional<AttentionPooling> image_pool_, text_pool_;
};

}  // namespace mammut
