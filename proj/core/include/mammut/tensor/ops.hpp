#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "mammut/tensor/tensor.hpp"

namespace mammut {

/// Boolean tensor used to hide positions from softmax. `true` = visible.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> allowed;

  Mask() = default;
  Mask(Shape s, bool value) : shape(std::move(s)), allowed(numel(shape), value ? 1 : 0) {}

  bool at(std::size_t flat) const { return allowed[flat] != 0; }
};

Mask mask_and(const Mask& a, const Mask& b);

/// Names of every differentiable op that can appear on the tape.
std::span<const std::string_view> registered_ops();

// Broadcasting rule for the binary ops below: `b` either has the same shape
// as `a`, a shape equal to a trailing suffix of `a` (leading-batch expansion),
// or exactly one element. Everything else is a DimensionError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(sigmoid(x)) without overflow for large |x|.
Tensor log_sigmoid(const Tensor& x);
/// Tanh approximation of the Gaussian error linear unit.
Tensor gelu(const Tensor& x);

/// a[..., k] x b[k, n] -> [..., n]. Leading extents of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[B, m, k] x b[B, k, n] -> [B, m, n]; with transpose_b, b is [B, n, k].
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x);  // 2-D only
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);

/// Softmax over the last axis with hidden positions forced to exactly zero.
/// `mask.shape` must be a trailing suffix of (or equal to) `logits.shape()`.
Tensor masked_softmax(const Tensor& logits, const Mask& mask);
Tensor log_softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Divides each last-axis row by its Euclidean norm.
Tensor l2_normalize(const Tensor& x);

/// Rows of `table` [V, d] selected by `ids`; result shape is out_prefix + [d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape out_prefix);
/// out[i] = x[i, index[i]] with x viewed as [rows, last].
Tensor gather_last(const Tensor& x, std::span<const std::int32_t> index);

/// Corner-aligned bilinear resize of a [H, W, d] grid to [out_h, out_w, d].
Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w);
/// Sub-grid [y0, y0+h) x [x0, x0+w) of a [H, W, d] grid.
Tensor crop2d(const Tensor& grid, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
/// Bilinear samples of a [H, W, d] grid at fractional (row, col) coordinates,
/// clamped to the grid extent. Result is [points, d].
Tensor bilinear_sample(const Tensor& grid, std::span<const std::pair<double, double>> points);

}  // namespace mammut
