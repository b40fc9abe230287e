#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace mammut {

enum class MaskingMode { bidirectional, causal };

const char* masking_mode_name(MaskingMode mode);
MaskingMode parse_masking_mode(const std::string& name);

struct MammutConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;

  std::size_t vision_layers = 4;
  std::size_t vision_dim = 128;
  std::size_t vision_heads = 4;

  std::size_t decoder_layers = 4;
  std::size_t decoder_dim = 128;
  std::size_t decoder_heads = 4;
  /// Cross-attention follows decoder layers k, 2k, 3k, ... (1-based).
  std::size_t cross_attention_every_k = 2;

  std::size_t mlp_ratio = 4;
  std::size_t vocab_size = 16;
  std::size_t max_text_len = 20;

  bool use_projection_head = false;
  bool use_attention_pooling = false;
  bool tie_embeddings = false;
  MaskingMode masking_mode_contrastive = MaskingMode::bidirectional;

  double layer_norm_eps = 1e-6;
  double init_std = 0.02;
  std::uint64_t init_seed = 0;

  std::size_t grid_size() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_size() * grid_size(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  /// M = floor(N / k).
  std::size_t cross_attention_layers() const { return decoder_layers / cross_attention_every_k; }
  /// Whether 0-based decoder layer `i` is followed by cross-attention.
  bool has_cross_attention(std::size_t i) const { return (i + 1) % cross_attention_every_k == 0; }

  void validate() const;
};

/// Closed-form trainable parameter count.
///
/// With Dv = vision_dim, D = decoder_dim, r = mlp_ratio, p = patch_size,
/// G = grid_size, L = vision_layers, N = decoder_layers, M = floor(N/k),
/// V = vocab_size, T = max_text_len and block(d) = (4 + 2r)d^2 + (9 + r)d:
///
///   patch embedding      3p^2 Dv + Dv
///   positional grid      G^2 Dv
///   encoder blocks       L block(Dv)
///   encoder final norm   2 Dv
///   visual projection    Dv D + D
///   token + position     V D + T D
///   decoder layers       N block(D)
///   cross-attention      M (4 D^2 + 6 D)
///   decoder final norm   2 D
///   output projection    D V + V   (V only when tied)
///   temperature          1
///   projection heads     2 (D^2 + D)        if enabled
///   attention pooling    2 (4 D^2 + 5 D)    if enabled
std::size_t parameter_count(const MammutConfig& config);

}  // namespace mammut
