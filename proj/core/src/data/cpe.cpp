#include "mammut/data/cpe.hpp"

#include <algorithm>
#include <cmath>

#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"

namespace mammut::data {

Tensor cropped_positional_embedding(const Tensor& grid, std::size_t upsample_to, const CropRect& crop,
                                    std::size_t out_size) {
  if (grid.ndim() != 3 || grid.dim(0) != grid.dim(1)) {
    throw DimensionError("cropped_positional_embedding: grid must be [G, G, d], got " + to_string(grid.shape()));
  }
  if (upsample_to < grid.dim(0)) {
    throw ContractError(concat("cropped_positional_embedding: upsample size ", upsample_to,
                               " is smaller than grid size ", grid.dim(0)));
  }
  if (crop.height == 0 || crop.width == 0) {
    throw ContractError("cropped_positional_embedding: crop has zero area");
  }
  if (crop.y0 + crop.height > upsample_to || crop.x0 + crop.width > upsample_to) {
    throw ContractError(concat("cropped_positional_embedding: crop (", crop.y0, ",", crop.x0, ",",
                               crop.height, ",", crop.width, ") exceeds ", upsample_to, "x", upsample_to));
  }
  Tensor up = upsample_to == grid.dim(0) ? grid : bilinear_resize(grid, upsample_to, upsample_to);
  Tensor region = crop2d(up, crop.y0, crop.x0, crop.height, crop.width);
  if (crop.height == out_size && crop.width == out_size) return region;
  return bilinear_resize(region, out_size, out_size);
}

CropRect sample_crop(std::size_t upsample_to, const CropSampling& sampling, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale_dist(sampling.min_scale, sampling.max_scale);
  std::uniform_real_distribution<double> aspect_dist(sampling.min_aspect, sampling.max_aspect);
  const double scale = scale_dist(rng);
  const double aspect = aspect_dist(rng);
  const double u = static_cast<double>(upsample_to);
  auto extent = [&](double v) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(v)), 1, upsample_to);
  };
  CropRect rect;
  rect.width = extent(u * std::sqrt(scale * aspect));
  rect.height = extent(u * std::sqrt(scale / aspect));
  rect.y0 = std::uniform_int_distribution<std::size_t>(0, upsample_to - rect.height)(rng);
  rect.x0 = std::uniform_int_distribution<std::size_t>(0, upsample_to - rect.width)(rng);
  return rect;
}

}  // namespace mammut::data
