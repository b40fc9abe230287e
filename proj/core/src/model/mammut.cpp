#include "mammut/model/mammut.hpp"

#include <algorithm>

#include "mammut/errors.hpp"

namespace mammut {

Mask build_attention_mask(MaskingMode mode, const data::TokenBatch& tokens) {
  const std::size_t b = tokens.batch, t = tokens.length;
  Mask mask({b, t, t}, false);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t q = 0; q < t; ++q) {
      for (std::size_t k = 0; k < t; ++k) {
        const bool visible = tokens.is_valid(i, k) && (mode == MaskingMode::bidirectional || k <= q);
        mask.allowed[(i * t + q) * t + k] = visible ? 1 : 0;
      }
    }
  }
  return mask;
}

Mammut::Mammut(MammutConfig config) : config_(config), store_(config.init_seed, config.init_std) {
  config_.validate();
  const auto& c = config_;
  const double eps = c.layer_norm_eps;

  patch_embed_ = Linear::create(store_, "vision.patch_embed", c.patch_dim(), c.vision_dim);
  pos_grid_ = store_.add("vision.pos_grid", {c.grid_size(), c.grid_size(), c.vision_dim}, Init::normal);
  for (std::size_t i = 0; i < c.vision_layers; ++i) {
    encoder_.push_back(TransformerBlock::create(store_, concat("vision.block", i), c.vision_dim, c.vision_heads,
                                                c.mlp_ratio, eps));
  }
  encoder_norm_ = LayerNorm::create(store_, "vision.norm", c.vision_dim, eps);
  projection_ = Linear::create(store_, "projection", c.vision_dim, c.decoder_dim);

  token_embed_ = store_.add("decoder.token_embed", {c.vocab_size, c.decoder_dim}, Init::normal);
  text_pos_ = store_.add("decoder.pos_embed", {c.max_text_len, c.decoder_dim}, Init::normal);
  for (std::size_t i = 0; i < c.decoder_layers; ++i) {
    decoder_.push_back(TransformerBlock::create(store_, concat("decoder.layer", i), c.decoder_dim,
                                                c.decoder_heads, c.mlp_ratio, eps));
    if (c.has_cross_attention(i)) {
      cross_.emplace_back(
          CrossAttentionBlock::create(store_, concat("decoder.cross", i), c.decoder_dim, c.decoder_heads, eps));
    } else {
      cross_.emplace_back(std::nullopt);
    }
  }
  decoder_norm_ = LayerNorm::create(store_, "decoder.norm", c.decoder_dim, eps);
  if (!c.tie_embeddings) {
    output_weight_ = store_.add("decoder.output.weight", {c.decoder_dim, c.vocab_size}, Init::normal);
  }
  output_bias_ = store_.add("decoder.output.bias", {c.vocab_size}, Init::zeros);

  temperature_ = Temperature::learnable();
  store_.adopt("temperature.log_tau", temperature_.log_tau);

  if (c.use_projection_head) {
    image_head_ = Linear::create(store_, "head.image", c.decoder_dim, c.decoder_dim);
    text_head_ = Linear::create(store_, "head.text", c.decoder_dim, c.decoder_dim);
  }
  if (c.use_attention_pooling) {
    image_pool_ = AttentionPooling::create(store_, "pool.image", c.decoder_dim, c.decoder_heads);
    text_pool_ = AttentionPooling::create(store_, "pool.text", c.decoder_dim, c.decoder_heads);
  }
}

Tensor Mammut::embed_patches(const Tensor& patches) const {
  if (patches.ndim() != 3 || patches.dim(2) != config_.patch_dim()) {
    throw DimensionError(concat("encode_image: patch tokens must be [B, P, ", config_.patch_dim(), "], got ",
                                to_string(patches.shape())));
  }
  return patch_embed_(patches);
}

ImageEncoding Mammut::encode_image(const Tensor& patches, const Tensor& pos_grid) const {
  Tensor x = embed_patches(patches);
  const std::size_t p = patches.dim(1), d = config_.vision_dim;
  if (pos_grid.numel() != p * d || pos_grid.shape().back() != d) {
    throw DimensionError(concat("encode_image: ", p, " patches do not match positional grid ",
                                to_string(pos_grid.shape())));
  }
  return encode_tokens(add(x, reshape(pos_grid, {p, d})));
}

Tensor Mammut::finish_image(const Tensor& visual) const {
  Tensor pooled;
  if (image_pool_) {
    pooled = (*image_pool_)(visual, Mask({visual.dim(1)}, true));
  } else {
    pooled = mean(visual, 1);
  }
  if (image_head_) pooled = (*image_head_)(pooled);
  return l2_normalize(pooled);
}

ImageEncoding Mammut::encode_tokens(const Tensor& embedded) const {
  if (embedded.ndim() != 3 || embedded.dim(2) != config_.vision_dim || embedded.dim(1) == 0) {
    throw DimensionError(concat("encoder input must be [B, N, ", config_.vision_dim, "], got ",
                                to_string(embedded.shape())));
  }
  const Mask all({embedded.dim(1)}, true);
  Tensor x = embedded;
  for (const auto& blk : encoder_) x = blk(x, all);
  ImageEncoding out;
  out.tokens = encoder_norm_(x);
  out.visual = projection_(out.tokens);
  out.v = finish_image(out.visual);
  return out;
}

Tensor Mammut::decode(const data::TokenBatch& tokens, MaskingMode mode, const Tensor* visual) const {
  const std::size_t b = tokens.batch, t = tokens.length, d = config_.decoder_dim;
  if (b == 0 || t == 0) throw ContractError("decoder: empty token batch");
  if (t > config_.max_text_len) {
    throw DimensionError(concat("decoder: sequence length ", t, " exceeds max_text_len ", config_.max_text_len));
  }
  for (std::int32_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ContractError(concat("decoder: token id ", id, " outside vocabulary of ", config_.vocab_size));
    }
  }
  if (visual && (visual->ndim() != 3 || visual->dim(0) != b || visual->dim(2) != d)) {
    throw DimensionError(concat("decoder: visual tokens must be [", b, ", P, ", d, "], got ",
                                to_string(visual->shape())));
  }
  std::vector<std::int32_t> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<std::int32_t>(i);
  Tensor x = add(embedding(token_embed_, tokens.ids, {b, t}), embedding(text_pos_, positions, {t}));
  const Mask mask = build_attention_mask(mode, tokens);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = decoder_[i](x, mask);
    if (visual && cross_[i]) x = (*cross_[i])(x, *visual);
  }
  return decoder_norm_(x);
}

Tensor Mammut::pool_text(const Tensor& features, const data::TokenBatch& tokens) const {
  const std::size_t b = tokens.batch, t = tokens.length;
  std::vector<double> weights(b * t, 0.0);
  Mask keys({b, 1, t}, false);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t n = tokens.valid_length(i);
    if (n == 0) throw ContractError(concat("contrastive_pass: row ", i, " is empty"));
    for (std::size_t s = 0; s < n; ++s) {
      weights[i * t + s] = 1.0 / static_cast<double>(n);
      keys.allowed[i * t + s] = 1;
    }
  }
  Tensor pooled;
  if (text_pool_) {
    pooled = (*text_pool_)(features, keys);
  } else {
    pooled = reshape(batched_matmul(Tensor::from({b, 1, t}, weights), features), {b, features.dim(2)});
  }
  if (text_head_) pooled = (*text_head_)(pooled);
  return l2_normalize(pooled);
}

Tensor Mammut::contrastive_pass(const data::TokenBatch& tokens) const {
  for (std::size_t i = 0; i < tokens.batch; ++i) {
    if (tokens.valid_length(i) == 0) throw ContractError(concat("contrastive_pass: row ", i, " is empty"));
  }
  return pool_text(decode(tokens, config_.masking_mode_contrastive, nullptr), tokens);
}

Tensor Mammut::generative_pass(const data::TokenBatch& tokens, const Tensor& visual) const {
  if (!visual.defined()) throw ContractError("generative_pass: visual tokens are required");
  Tensor features = decode(tokens, MaskingMode::causal, &visual);
  Tensor weight = config_.tie_embeddings ? transpose(token_embed_) : output_weight_;
  return add(matmul(features, weight), output_bias_);
}

std::vector<std::vector<std::int32_t>> Mammut::generate_batch(
    const Tensor& visual, const std::vector<std::vector<std::int32_t>>& prompts, std::size_t max_len) const {
  NoGradGuard no_grad;
  const std::size_t b = prompts.size();
  if (visual.ndim() != 3 || visual.dim(0) != b) {
    throw DimensionError(concat("generate: ", b, " prompts for visual tokens ", to_string(visual.shape())));
  }
  const std::size_t limit = std::min(max_len, config_.max_text_len);
  std::vector<std::vector<std::int32_t>> seqs = prompts;
  std::vector<std::vector<std::int32_t>> out(b);
  std::vector<bool> done(b, false);
  for (std::size_t i = 0; i < b; ++i) {
    if (seqs[i].empty() || seqs[i][0] != data::Vocabulary::bos_id) {
      throw ContractError(concat("generate: prompt ", i, " must begin with bos"));
    }
    if (seqs[i].size() >= limit) done[i] = true;
  }
  const std::size_t v = config_.vocab_size;
  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < b; ++i) {
      if (!done[i]) active.push_back(i);
    }
    if (active.empty()) break;
    std::size_t len = 0;
    std::vector<std::vector<std::int32_t>> rows;
    for (std::size_t i : active) {
      rows.push_back(seqs[i]);
      len = std::max(len, seqs[i].size());
    }
    Tensor vis = visual;
    if (active.size() != b) {
      // Gather the visual tokens of unfinished rows.
      std::vector<std::int32_t> idx(active.begin(), active.end());
      const std::size_t p = visual.dim(1), d = visual.dim(2);
      vis = embedding(reshape(visual, {b, p * d}), idx, {active.size()});
      vis = reshape(vis, {active.size(), p, d});
    }
    Tensor logits = generative_pass(data::TokenBatch::from_rows(rows, len), vis);
    const Buffer& buf = logits.buffer();
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t i = active[r];
      const std::size_t base = (r * len + seqs[i].size() - 1) * v;
      std::size_t best = 0;
      for (std::size_t k = 1; k < v; ++k) {
        if (buf.get(base + k) > buf.get(base + best)) best = k;
      }
      const auto tok = static_cast<std::int32_t>(best);
      if (tok == data::Vocabulary::eos_id) {
        done[i] = true;
        continue;
      }
      seqs[i].push_back(tok);
      out[i].push_back(tok);
      if (seqs[i].size() >= limit) done[i] = true;
    }
  }
  return out;
}

std::vector<std::int32_t> Mammut::generate(const Tensor& patches, std::span<const std::int32_t> prompt,
                                           std::size_t max_len) const {
  NoGradGuard no_grad;
  Tensor batch = patches.ndim() == 2 ? reshape(patches, {1, patches.dim(0), patches.dim(1)}) : patches;
  if (batch.dim(0) != 1) throw DimensionError("generate: expects a single image");
  ImageEncoding enc = encode_image(batch);
  return generate_batch(enc.visual, {std::vector<std::int32_t>(prompt.begin(), prompt.end())}, max_len).front();
}

std::vector<std::string> Mammut::decoder_parameter_names(bool include_cross_attention) const {
  std::vector<std::string> names;
  for (const auto& [name, t] : store_.entries()) {
    if (name.rfind("decoder.", 0) != 0) continue;
    if (!include_cross_attention && name.rfind("decoder.cross", 0) == 0) continue;
    names.push_back(name);
  }
  return names;
}

}  // namespace mammut
