#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mammut/tensor/tensor.hpp"

namespace mammut::data {

/// Row-major H x W x 3 image with values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  static constexpr std::size_t channels = 3;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * channels, 0.0f) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Splits an image into non-overlapping p x p patches in row-major patch
/// order; each row is the patch flattened in (row, col, channel) order.
/// Result is [(H/p)*(W/p), 3*p*p].
Tensor patchify(const Image& image, std::size_t patch);
/// Inverse of patchify for an image of the given size.
Image unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch);
/// Stacks patchify() over a batch: [B, P, 3*p*p].
Tensor patchify_batch(const std::vector<Image>& images, std::size_t patch);

/// Corner-aligned bilinear resize (same convention as bilinear_resize).
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width);

/// Square resize to `resize_to`, then a uniformly placed `crop_to` crop.
Image resize_random_crop(const Image& image, std::size_t resize_to, std::size_t crop_to,
                         std::mt19937_64& rng);

}  // namespace mammut::data
