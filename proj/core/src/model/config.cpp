#include "mammut/model/config.hpp"

#include "mammut/errors.hpp"

namespace mammut {

const char* masking_mode_name(MaskingMode mode) {
  return mode == MaskingMode::causal ? "causal" : "bidirectional";
}

MaskingMode parse_masking_mode(const std::string& name) {
  if (name == "bidirectional") return MaskingMode::bidirectional;
  if (name == "causal") return MaskingMode::causal;
  throw ConfigError("unknown masking mode '" + name + "' (expected bidirectional or causal)");
}

void MammutConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(patch_size > 0 && image_size > 0 && image_size % patch_size == 0,
          concat("patch_size ", patch_size, " must divide image_size ", image_size));
  require(vision_layers > 0 && decoder_layers > 0, "layer counts must be positive");
  require(vision_heads > 0 && vision_dim % vision_heads == 0,
          concat("vision_heads ", vision_heads, " must divide vision_dim ", vision_dim));
  require(decoder_heads > 0 && decoder_dim % decoder_heads == 0,
          concat("decoder_heads ", decoder_heads, " must divide decoder_dim ", decoder_dim));
  require(cross_attention_every_k >= 1, "cross_attention_every_k must be at least 1");
  require(mlp_ratio >= 1, "mlp_ratio must be at least 1");
  require(vocab_size >= 3, "vocab_size must hold the reserved tokens");
  require(max_text_len >= 2, "max_text_len must be at least 2");
  require(layer_norm_eps > 0 && init_std > 0, "layer_norm_eps and init_std must be positive");
}

std::size_t parameter_count(const MammutConfig& c) {
  const std::size_t dv = c.vision_dim, d = c.decoder_dim, r = c.mlp_ratio, p = c.patch_size;
  const std::size_t g = c.grid_size(), v = c.vocab_size, t = c.max_text_len;
  auto block = [r](std::size_t w) { return (4 + 2 * r) * w * w + (9 + r) * w; };
  std::size_t n = 0;
  n += 3 * p * p * dv + dv;
  n += g * g * dv;
  n += c.vision_layers * block(dv);
  n += 2 * dv;
  n += dv * d + d;
  n += v * d + t * d;
  n += c.decoder_layers * block(d);
  n += c.cross_attention_layers() * (4 * d * d + 6 * d);
  n += 2 * d;
  n += c.tie_embeddings ? v : d * v + v;
  n += 1;
  if (c.use_projection_head) n += 2 * (d * d + d);
  if (c.use_attention_pooling) n += 2 * (4 * d * d + 5 * d);
  return n;
}

}  // namespace mammut
