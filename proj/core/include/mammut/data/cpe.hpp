#pragma once

#include <cstddef>
#include <random>

#include "mammut/tensor/tensor.hpp"

namespace mammut::data {

/// Integer rectangle inside the up-sampled positional grid.
struct CropRect {
  std::size_t y0 = 0;
  std::size_t x0 = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct CropSampling {
  double min_scale = 0.3;  // fraction of the up-sampled area
  double max_scale = 1.0;
  double min_aspect = 0.75;
  double max_aspect = 1.33;
};

/// Cropped positional embedding: bilinearly up-sample the learned [G, G, d]
/// grid to U x U, cut out `crop`, and resize the crop back to G x G.
/// Differentiable with respect to `grid`.
Tensor cropped_positional_embedding(const Tensor& grid, std::size_t upsample_to, const CropRect& crop,
                                    std::size_t out_size);

/// Uniform area scale, uniform aspect ratio, uniform position.
CropRect sample_crop(std::size_t upsample_to, const CropSampling& sampling, std::mt19937_64& rng);

}  // namespace mammut::data
