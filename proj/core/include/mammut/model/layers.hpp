#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mammut/tensor/ops.hpp"
#include "mammut/tensor/tensor.hpp"

namespace mammut {

enum class Init { zeros, ones, normal, identity };

/// Owns every trainable tensor of a model, in registration order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, double init_std = 0.02);

  Tensor add(const std::string& name, Shape shape, Init init);
  /// Registers an existing tensor (e.g. one produced elsewhere) under `name`.
  void adopt(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  /// Name of the parameter stored in `node`, or empty.
  std::string name_of(const detail::Node* node) const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
  double init_std_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       Init weight_init = Init::normal);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-6;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim, double eps);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
};

/// Multi-head scaled dot-product attention. Queries come from `query`
/// [B, T, d], keys and values from `context` [B, S, d].
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, Init out_init = Init::normal);
  /// `mask` must be a suffix of [B, T, S] (e.g. [B, T, S] or [S]).
  Tensor operator()(const Tensor& query, const Tensor& context, const Mask& mask) const;
};

struct FeedForward {
  Linear up, down;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

/// Pre-normalization transformer block: self-attention then feed-forward.
struct TransformerBlock {
  LayerNorm attn_norm;
  MultiHeadAttention attn;
  LayerNorm ffn_norm;
  FeedForward ffn;

  static TransformerBlock create(ParameterStore& store, const std::string& name, std::size_t dim,
                                 std::size_t heads, std::size_t mlp_ratio, double eps);
  Tensor operator()(const Tensor& x, const Mask& mask) const;
};

/// Pre-normalized cross-attention sublayer with a residual connection.
struct CrossAttentionBlock {
  LayerNorm norm;
  MultiHeadAttention attn;

  static CrossAttentionBlock create(ParameterStore& store, const std::string& name, std::size_t dim,
                                    std::size_t heads, double eps);
  Tensor operator()(const Tensor& x, const Tensor& visual) const;
};

/// A learned query attending over a token sequence; replaces mean pooling
/// when enabled.
struct AttentionPooling {
  Tensor query;  // [1, d]
  MultiHeadAttention attn;

  static AttentionPooling create(ParameterStore& store, const std::string& name, std::size_t dim,
                                 std::size_t heads);
  /// x [B, T, d], key mask [B, 1, T] -> [B, d].
  Tensor operator()(const Tensor& x, const Mask& keys) const;
};

}  // namespace mammut
