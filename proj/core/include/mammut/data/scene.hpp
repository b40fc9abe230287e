#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mammut/data/image.hpp"

namespace mammut::data {

enum class ShapeKind { circle, square, triangle };

inline constexpr std::array<const char*, 3> kShapeNames{"circle", "square", "triangle"};

struct Color {
  std::string name;
  float r, g, b;
};

/// The default eight-color palette.
std::vector<Color> default_palette();

/// One object of a scene. `cell` is the row-major index into the grid.
struct SceneObject {
  ShapeKind shape = ShapeKind::circle;
  int color = 0;
  int cell = 0;

  bool operator==(const SceneObject&) const = default;
  auto operator<=>(const SceneObject&) const = default;
};

/// Objects are placed in grid cells 0, 1, 2, ... in row-major order, so the
/// caption (which lists objects by cell) determines the object list.
struct SceneConfig {
  std::size_t canvas = 32;
  std::size_t grid = 2;
  std::size_t min_objects = 3;
  std::size_t max_objects = 4;
  std::vector<Color> palette = default_palette();

  void validate() const;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  Image canvas;
  std::vector<SceneObject> objects;
  std::string caption;
};

/// "a red circle and a blue square ...", objects in cell order.
std::string caption_for(const std::vector<SceneObject>& objects, const SceneConfig& config);

/// Bit-identical for identical (seed, config).
SyntheticScene synthesize_pair(std::uint64_t seed, const SceneConfig& config);

/// The scene of `synthesize_pair` animated by per-object linear motion.
struct SyntheticVideo {
  std::uint64_t seed = 0;
  std::vector<Image> frames;
  std::vector<SceneObject> objects;
  std::string caption;
  /// centers[object][frame] = (y, x) in pixels.
  std::vector<std::vector<std::pair<float, float>>> centers;
};

SyntheticVideo synthesize_video(std::uint64_t seed, const SceneConfig& config, std::size_t frames);

/// Repeats a single frame `frames` times.
std::vector<Image> repeat_frame(const Image& frame, std::size_t frames);

}  // namespace mammut::data
