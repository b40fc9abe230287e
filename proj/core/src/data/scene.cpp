#include "mammut/data/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mammut/errors.hpp"

namespace mammut::data {
namespace {

struct Placement {
  SceneObject object;
  float cy, cx;   // center in pixels
  float radius;   // half extent in pixels
  float vy, vx;   // motion in pixels per frame
};

bool covers(ShapeKind shape, float dy, float dx, float r) {
  switch (shape) {
    case ShapeKind::circle:
      return dy * dy + dx * dx <= r * r;
    case ShapeKind::square:
      return std::abs(dy) <= 0.85f * r && std::abs(dx) <= 0.85f * r;
    case ShapeKind::triangle:
      // Apex up, base at the bottom of the bounding box.
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5f * (dy + r);
  }
  return false;
}

void draw(Image& image, const Placement& p, const Color& color, float cy, float cx) {
  const auto lo_y = static_cast<long>(std::floor(cy - p.radius - 1));
  const auto hi_y = static_cast<long>(std::ceil(cy + p.radius + 1));
  const auto lo_x = static_cast<long>(std::floor(cx - p.radius - 1));
  const auto hi_x = static_cast<long>(std::ceil(cx + p.radius + 1));
  for (long y = std::max(0L, lo_y); y <= std::min<long>(static_cast<long>(image.height) - 1, hi_y); ++y) {
    for (long x = std::max(0L, lo_x); x <= std::min<long>(static_cast<long>(image.width) - 1, hi_x); ++x) {
      const float dy = static_cast<float>(y) + 0.5f - cy;
      const float dx = static_cast<float>(x) + 0.5f - cx;
      if (!covers(p.object.shape, dy, dx, p.radius)) continue;
      const auto yy = static_cast<std::size_t>(y);
      const auto xx = static_cast<std::size_t>(x);
      image.at(yy, xx, 0) = color.r;
      image.at(yy, xx, 1) = color.g;
      image.at(yy, xx, 2) = color.b;
    }
  }
}

std::vector<Placement> place_objects(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> count_dist(config.min_objects, config.max_objects);
  std::uniform_int_distribution<int> shape_dist(0, static_cast<int>(kShapeNames.size()) - 1);
  std::uniform_int_distribution<int> color_dist(0, static_cast<int>(config.palette.size()) - 1);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  const std::size_t count = count_dist(rng);
  const float cell = static_cast<float>(config.canvas) / static_cast<float>(config.grid);
  std::vector<Placement> out;
  for (std::size_t i = 0; i < count; ++i) {
    Placement p;
    p.object.shape = static_cast<ShapeKind>(shape_dist(rng));
    p.object.color = color_dist(rng);
    p.object.cell = static_cast<int>(i);
    p.radius = cell * (0.28f + 0.14f * unit(rng));
    const float slack = std::max(0.0f, 0.5f * cell - p.radius - 0.5f);
    const float row = static_cast<float>(i / config.grid);
    const float col = static_cast<float>(i % config.grid);
    p.cy = (row + 0.5f) * cell + slack * (2 * unit(rng) - 1);
    p.cx = (col + 0.5f) * cell + slack * (2 * unit(rng) - 1);
    p.vy = 0.5f * (2 * unit(rng) - 1);
    p.vx = 0.5f * (2 * unit(rng) - 1);
    out.push_back(p);
  }
  return out;
}

Image render(const std::vector<Placement>& placements, const SceneConfig& config, float t) {
  Image image(config.canvas, config.canvas);
  for (const auto& p : placements) {
    draw(image, p, config.palette[static_cast<std::size_t>(p.object.color)], p.cy + t * p.vy,
         p.cx + t * p.vx);
  }
  return image;
}

}  // namespace

std::vector<Color> default_palette() {
  return {{"red", 1.0f, 0.0f, 0.0f},     {"green", 0.0f, 1.0f, 0.0f},  {"blue", 0.0f, 0.0f, 1.0f},
          {"yellow", 1.0f, 1.0f, 0.0f},  {"cyan", 0.0f, 1.0f, 1.0f},   {"magenta", 1.0f, 0.0f, 1.0f},
          {"white", 1.0f, 1.0f, 1.0f},   {"orange", 1.0f, 0.5f, 0.0f}};
}

void SceneConfig::validate() const {
  if (grid == 0 || canvas == 0 || canvas % grid != 0) {
    throw ConfigError(concat("scene: canvas ", canvas, " is not divisible into a ", grid, "x", grid, " grid"));
  }
  if (min_objects == 0 || min_objects > max_objects) {
    throw ConfigError(concat("scene: invalid object count range [", min_objects, ", ", max_objects, "]"));
  }
  if (max_objects > grid * grid) {
    throw ConfigError(concat("scene: ", max_objects, " objects exceed grid capacity ", grid * grid));
  }
  if (palette.empty()) throw ConfigError("scene: empty palette");
}

std::string caption_for(const std::vector<SceneObject>& objects, const SceneConfig& config) {
  std::vector<SceneObject> sorted = objects;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.cell < b.cell; });
  std::string caption;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) caption += " and ";
    caption += "a ";
    caption += config.palette.at(static_cast<std::size_t>(sorted[i].color)).name;
    caption += " ";
    caption += kShapeNames.at(static_cast<std::size_t>(sorted[i].shape));
  }
  return caption;
}

SyntheticScene synthesize_pair(std::uint64_t seed, const SceneConfig& config) {
  auto placements = place_objects(seed, config);
  SyntheticScene scene;
  scene.seed = seed;
  scene.canvas = render(placements, config, 0.0f);
  for (const auto& p : placements) scene.objects.push_back(p.object);
  scene.caption = caption_for(scene.objects, config);
  return scene;
}

SyntheticVideo synthesize_video(std::uint64_t seed, const SceneConfig& config, std::size_t frames) {
  if (frames == 0) throw ContractError("synthesize_video: need at least one frame");
  auto placements = place_objects(seed, config);
  SyntheticVideo video;
  video.seed = seed;
  for (const auto& p : placements) video.objects.push_back(p.object);
  video.caption = caption_for(video.objects, config);
  video.centers.resize(placements.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const auto tf = static_cast<float>(t);
    video.frames.push_back(render(placements, config, tf));
    for (std::size_t i = 0; i < placements.size(); ++i) {
      video.centers[i].emplace_back(placements[i].cy + tf * placements[i].vy,
                                    placements[i].cx + tf * placements[i].vx);
    }
  }
  return video;
}

std::vector<Image> repeat_frame(const Image& frame, std::size_t frames) {
  return std::vector<Image>(frames, frame);
}

}  // namespace mammut::data
