#include "mammut/model/layers.hpp"

#include <cmath>

#include "mammut/errors.hpp"

namespace mammut {

ParameterStore::ParameterStore(std::uint64_t seed, double init_std) : rng_(seed), init_std_(init_std) {}

Tensor ParameterStore::add(const std::string& name, Shape shape, Init init) {
  Tensor t = Tensor::zeros(shape, true);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      t.mutable_buffer().fill(1.0);
      break;
    case Init::normal: {
      std::normal_distribution<double> dist(0.0, init_std_);
      Buffer& buf = t.mutable_buffer();
      for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, dist(rng_));
      break;
    }
    case Init::identity: {
      if (shape.size() != 2) throw DimensionError("identity init needs a matrix, got " + to_string(shape));
      Buffer& buf = t.mutable_buffer();
      for (std::size_t i = 0; i < std::min(shape[0], shape[1]); ++i) buf.set(i * shape[1] + i, 1.0);
      break;
    }
  }
  adopt(name, t);
  return t;
}

void ParameterStore::adopt(const std::string& name, Tensor tensor) {
  if (!index_.emplace(name, entries_.size()).second) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  tensor.set_requires_grad(true);
  entries_.emplace_back(name, std::move(tensor));
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::string ParameterStore::name_of(const detail::Node* node) const {
  for (const auto& [name, t] : entries_) {
    if (t.id() == node) return name;
  }
  return {};
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      Init weight_init) {
  return {store.add(name + ".weight", {in, out}, weight_init), store.add(name + ".bias", {out}, Init::zeros)};
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim, double eps) {
  return {store.add(name + ".gain", {dim}, Init::ones), store.add(name + ".bias", {dim}, Init::zeros), eps};
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                              std::size_t heads, Init out_init) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(concat(name, ": ", heads, " heads do not divide width ", dim));
  }
  MultiHeadAttention m;
  m.q = Linear::create(store, name + ".q", dim, dim);
  m.k = Linear::create(store, name + ".k", dim, dim);
  m.v = Linear::create(store, name + ".v", dim, dim);
  m.out = Linear::create(store, name + ".out", dim, dim, out_init);
  m.heads = heads;
  return m;
}

namespace {

// [B, T, H*dh] -> [H*B, T, dh]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (heads == 1) return x;
  Tensor y = permute(reshape(x, {b, t, heads, d / heads}), {2, 0, 1, 3});
  return reshape(y, {heads * b, t, d / heads});
}

// [H*B, T, dh] -> [B, T, H*dh]
Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (heads == 1) return x;
  const std::size_t b = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2);
  Tensor y = permute(reshape(x, {heads, b, t, dh}), {1, 2, 0, 3});
  return reshape(y, {b, t, heads * dh});
}

}  // namespace

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& context, const Mask& mask) const {
  if (query.ndim() != 3 || context.ndim() != 3 || query.dim(0) != context.dim(0)) {
    throw DimensionError(concat("attention: query ", to_string(query.shape()), " and context ",
                                to_string(context.shape()), " are incompatible"));
  }
  const std::size_t b = query.dim(0), t = query.dim(1), s = context.dim(1);
  const std::size_t dh = query.dim(2) / heads;
  Tensor qh = split_heads(q(query), heads);
  Tensor kh = split_heads(k(context), heads);
  Tensor vh = split_heads(v(context), heads);
  Tensor scores = scale(batched_matmul(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = masked_softmax(reshape(scores, {heads, b, t, s}), mask);
  Tensor mixed = batched_matmul(reshape(probs, {heads * b, t, s}), vh);
  return out(merge_heads(mixed, heads));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                std::size_t hidden) {
  return {Linear::create(store, name + ".up", dim, hidden), Linear::create(store, name + ".down", hidden, dim)};
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                          std::size_t heads, std::size_t mlp_ratio, double eps) {
  TransformerBlock blk;
  blk.attn_norm = LayerNorm::create(store, name + ".attn_norm", dim, eps);
  blk.attn = MultiHeadAttention::create(store, name + ".attn", dim, heads);
  blk.ffn_norm = LayerNorm::create(store, name + ".ffn_norm", dim, eps);
  blk.ffn = FeedForward::create(store, name + ".ffn", dim, dim * mlp_ratio);
  return blk;
}

Tensor TransformerBlock::operator()(const Tensor& x, const Mask& mask) const {
  Tensor h = attn_norm(x);
  Tensor y = add(x, attn(h, h, mask));
  return add(y, ffn(ffn_norm(y)));
}

CrossAttentionBlock CrossAttentionBlock::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                                std::size_t heads, double eps) {
  // Zero output projection: a fresh cross-attention sublayer is the identity.
  return {LayerNorm::create(store, name + ".norm", dim, eps),
          MultiHeadAttention::create(store, name + ".attn", dim, heads, Init::zeros)};
}

Tensor CrossAttentionBlock::operator()(const Tensor& x, const Tensor& visual) const {
  return add(x, attn(norm(x), visual, Mask({visual.dim(1)}, true)));
}

AttentionPooling AttentionPooling::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                          std::size_t heads) {
  Tensor query = store.add(name + ".query", {1, dim}, Init::normal);
  return {query, MultiHeadAttention::create(store, name + ".attn", dim, heads)};
}

Tensor AttentionPooling::operator()(const Tensor& x, const Mask& keys) const {
  const std::size_t b = x.dim(0), d = x.dim(2);
  Tensor q = add(Tensor::zeros({b, 1, d}), query);
  return reshape(attn(q, x, keys), {b, d});
}

}  // namespace mammut
