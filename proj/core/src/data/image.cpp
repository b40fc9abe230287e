#include "mammut/data/image.hpp"

#include <algorithm>
#include <cmath>

#include "mammut/errors.hpp"

namespace mammut::data {
namespace {

void check_patch(std::size_t h, std::size_t w, std::size_t p) {
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError(concat("patch size ", p, " does not divide image ", h, "x", w));
  }
}

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

template <class T>
void write_patches(const Image& image, std::size_t p, std::span<T> out) {
  const std::size_t cols = image.width / p;
  const std::size_t rows = image.height / p;
  std::size_t k = 0;
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t c = 0; c < Image::channels; ++c) {
            out[k++] = static_cast<T>(image.at(pr * p + y, pc * p + x, c));
          }
        }
      }
    }
  }
}

}  // namespace

Tensor patchify(const Image& image, std::size_t patch) {
  check_patch(image.height, image.width, patch);
  const std::size_t count = (image.height / patch) * (image.width / patch);
  Tensor out = Tensor::zeros({count, Image::channels * patch * patch});
  dispatch(out.precision(), [&]<class T>() { write_patches<T>(image, patch, out.mutable_data<T>()); });
  return out;
}

Tensor patchify_batch(const std::vector<Image>& images, std::size_t patch) {
  if (images.empty()) throw ContractError("patchify_batch: empty batch");
  const Image& first = images.front();
  check_patch(first.height, first.width, patch);
  const std::size_t count = (first.height / patch) * (first.width / patch);
  const std::size_t row = Image::channels * patch * patch;
  Tensor out = Tensor::zeros({images.size(), count, row});
  dispatch(out.precision(), [&]<class T>() {
    auto all = out.mutable_data<T>();
    for (std::size_t b = 0; b < images.size(); ++b) {
      if (images[b].height != first.height || images[b].width != first.width) {
        throw DimensionError("patchify_batch: images differ in size");
      }
      write_patches<T>(images[b], patch, all.subspan(b * count * row, count * row));
    }
  });
  return out;
}

Image unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch) {
  check_patch(height, width, patch);
  const std::size_t cols = width / patch;
  if (patches.shape() != Shape{(height / patch) * cols, Image::channels * patch * patch}) {
    throw DimensionError("unpatchify: patch matrix " + to_string(patches.shape()) +
                         " does not match image size");
  }
  Image image(height, width);
  std::size_t k = 0;
  for (std::size_t pr = 0; pr < height / patch; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < Image::channels; ++c) {
            image.at(pr * patch + y, pc * patch + x, c) = static_cast<float>(patches.at(k++));
          }
        }
      }
    }
  }
  return image;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DimensionError("resize_bilinear: empty target size");
  Image out(height, width);
  for (std::size_t i = 0; i < height; ++i) {
    const double sy = source_coord(i, image.height, height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double sx = source_coord(j, image.width, width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < Image::channels; ++c) {
        const double v = (1 - fy) * ((1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c)) +
                         fy * ((1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c));
        out.at(i, j, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
  if (y0 + height > image.height || x0 + width > image.width) {
    throw DimensionError("crop: rectangle outside image");
  }
  Image out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * image.width + x0) * Image::channels),
                width * Image::channels,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * width * Image::channels));
  }
  return out;
}

Image resize_random_crop(const Image& image, std::size_t resize_to, std::size_t crop_to,
                         std::mt19937_64& rng) {
  if (crop_to > resize_to) {
    throw ContractError(concat("resize_random_crop: crop ", crop_to, " exceeds resize ", resize_to));
  }
  Image resized = (image.height == resize_to && image.width == resize_to)
                      ? image
                      : resize_bilinear(image, resize_to, resize_to);
  std::uniform_int_distribution<std::size_t> offset(0, resize_to - crop_to);
  const std::size_t y0 = offset(rng);
  const std::size_t x0 = offset(rng);
  return crop(resized, y0, x0, crop_to, crop_to);
}

}  // namespace mammut::data
