#include "mammut/video/video.hpp"

#include <cmath>
#include <utility>

#include "mammut/errors.hpp"

namespace mammut::video {

namespace {

const char* kAxis[3] = {"t", "h", "w"};

std::string extent_string(const Extent& e) { return concat("(", e[0], ",", e[1], ",", e[2], ")"); }

}  // namespace

Extent TubeSpec::grid(const Extent& extent) const {
  validate(extent);
  Extent g{};
  for (int a = 0; a < 3; ++a) g[a] = (extent[a] - kernel[a] - offset[a]) / stride[a] + 1;
  return g;
}

std::size_t TubeSpec::count(const Extent& extent) const {
  const Extent g = grid(extent);
  return g[0] * g[1] * g[2];
}

void TubeSpec::validate(const Extent& extent) const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] == 0 || stride[a] == 0) {
      throw ConfigError(concat("tube spec: kernel and stride must be positive along ", kAxis[a]));
    }
    if (kernel[a] + offset[a] > extent[a]) {
      throw ContractError(concat("tube kernel ", extent_string(kernel), " with offset ", extent_string(offset),
                                 " does not fit video extent ", extent_string(extent)));
    }
  }
}

Extent extent_of(const Video& video) {
  if (video.empty()) throw ContractError("video has no frames");
  for (const auto& f : video) {
    if (f.height != video[0].height || f.width != video[0].width) {
      throw DimensionError("video frames differ in size");
    }
  }
  return {video.size(), video[0].height, video[0].width};
}

Tensor extract_tubes(const Video& video, const TubeSpec& spec) {
  const Extent extent = extent_of(video);
  const Extent g = spec.grid(extent);
  const auto [kt, kh, kw] = spec.kernel;
  const std::size_t row = spec.token_dim(), c = data::Image::channels;
  Tensor out = Tensor::zeros({g[0] * g[1] * g[2], row});
  dispatch(out.precision(), [&]<class T>() {
    auto dst = out.mutable_data<T>();
    std::size_t n = 0;
    for (std::size_t it = 0; it < g[0]; ++it) {
      for (std::size_t iy = 0; iy < g[1]; ++iy) {
        for (std::size_t ix = 0; ix < g[2]; ++ix, ++n) {
          const std::size_t t0 = spec.offset[0] + it * spec.stride[0];
          const std::size_t y0 = spec.offset[1] + iy * spec.stride[1];
          const std::size_t x0 = spec.offset[2] + ix * spec.stride[2];
          T* p = dst.data() + n * row;
          for (std::size_t t = 0; t < kt; ++t) {
            const auto& frame = video[t0 + t];
            for (std::size_t y = 0; y < kh; ++y) {
              for (std::size_t x = 0; x < kw; ++x) {
                for (std::size_t ch = 0; ch < c; ++ch) *p++ = static_cast<T>(frame.at(y0 + y, x0 + x, ch));
              }
            }
          }
        }
      }
    }
  });
  return out;
}

std::vector<std::array<double, 3>> tube_centers(const Extent& extent, const TubeSpec& spec) {
  const Extent g = spec.grid(extent);
  std::vector<std::array<double, 3>> out;
  out.reserve(g[0] * g[1] * g[2]);
  for (std::size_t it = 0; it < g[0]; ++it) {
    for (std::size_t iy = 0; iy < g[1]; ++iy) {
      for (std::size_t ix = 0; ix < g[2]; ++ix) {
        const std::size_t idx[3] = {it, iy, ix};
        std::array<double, 3> center{};
        for (int a = 0; a < 3; ++a) {
          center[a] = static_cast<double>(spec.offset[a] + idx[a] * spec.stride[a]) +
                      (static_cast<double>(spec.kernel[a]) - 1.0) / 2.0;
        }
        out.push_back(center);
      }
    }
  }
  return out;
}

std::vector<std::size_t> sparse_frames(std::size_t frames, std::size_t temporal_stride) {
  if (temporal_stride == 0) throw ConfigError("temporal_stride must be at least 1");
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < frames; f += temporal_stride) out.push_back(f);
  return out;
}

Tensor sparse_frame_patches(const Video& video, std::size_t patch, std::size_t temporal_stride) {
  extent_of(video);
  std::vector<data::Image> picked;
  for (std::size_t f : sparse_frames(video.size(), temporal_stride)) picked.push_back(video[f]);
  Tensor stacked = data::patchify_batch(picked, patch);
  return reshape(stacked, {stacked.dim(0) * stacked.dim(1), stacked.dim(2)});
}

Tensor sinusoidal_embedding(const std::vector<std::array<double, 3>>& coords, std::size_t dim, double base) {
  if (coords.empty() || dim == 0) throw DimensionError("sinusoidal_embedding: need coordinates and dim > 0");
  const std::size_t per_axis = 2 * (dim / 6);
  std::vector<double> values(coords.size() * dim, 0.0);
  for (std::size_t n = 0; n < coords.size(); ++n) {
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t k = 0; k < per_axis / 2; ++k) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(per_axis));
        const double angle = coords[n][a] * freq;
        values[n * dim + a * per_axis + 2 * k] = std::sin(angle);
        values[n * dim + a * per_axis + 2 * k + 1] = std::cos(angle);
      }
    }
  }
  return Tensor::from({coords.size(), dim}, values);
}

const char* gate_mode_name(GateMode mode) { return mode == GateMode::per_channel ? "per_channel" : "scalar"; }

GateMode parse_gate_mode(const std::string& name) {
  if (name == "scalar") return GateMode::scalar;
  if (name == "per_channel") return GateMode::per_channel;
  throw ConfigError("unknown gate mode '" + name + "' (expected scalar or per_channel)");
}

std::vector<TubeSpec> default_tubes() {
  return {
      TubeSpec{{8, 4, 4}, {8, 8, 8}, {0, 0, 0}},
      TubeSpec{{2, 8, 8}, {2, 16, 16}, {0, 0, 0}},
  };
}

void VideoConfig::validate(const MammutConfig& model) const {
  if (frames == 0) throw ConfigError("video: frames must be positive");
  if (temporal_stride == 0) throw ConfigError("video: temporal_stride must be at least 1");
  if (max_tokens == 0) throw ConfigError("video: max_tokens must be positive");
  if (use_tubes) {
    const Extent extent{frames, model.image_size, model.image_size};
    for (const auto& spec : tubes) {
      try {
        spec.validate(extent);
      } catch (const ContractError& e) {
        throw ConfigError(std::string("video: ") + e.what());
      }
    }
  }
}

VideoAdapter::VideoAdapter(Mammut& model, VideoConfig config) : model_(&model), config_(std::move(config)) {
  config_.validate(model.config());
  ParameterStore& store = model.parameters();
  const std::size_t d = model.config().vision_dim;
  const Shape gate_shape = config_.gate == GateMode::scalar ? Shape{1} : Shape{d};
  patch_gate_ = store.add("video.gate.patches", gate_shape, Init::zeros);
  if (config_.use_tubes) {
    for (std::size_t i = 0; i < config_.tubes.size(); ++i) {
      tube_proj_.push_back(Linear::create(store, concat("video.tube", i), config_.tubes[i].token_dim(), d));
      tube_gates_.push_back(store.add(concat("video.gate.tube", i), gate_shape, Init::zeros));
    }
  }
}

std::vector<std::string> VideoAdapter::parameter_names(const VideoConfig& config) {
  std::vector<std::string> names{"video.gate.patches"};
  if (config.use_tubes) {
    for (std::size_t i = 0; i < config.tubes.size(); ++i) {
      names.push_back(concat("video.tube", i, ".weight"));
      names.push_back(concat("video.tube", i, ".bias"));
      names.push_back(concat("video.gate.tube", i));
    }
  }
  return names;
}

std::size_t VideoAdapter::token_count(const Extent& extent) const {
  const std::size_t g = model_->config().grid_size();
  std::size_t n = sparse_frames(extent[0], config_.temporal_stride).size() * g * g;
  if (config_.use_tubes) {
    for (const auto& spec : config_.tubes) n += spec.count(extent);
  }
  return n;
}

Tensor VideoAdapter::patch_positions(const Extent& extent) const {
  const auto& mc = model_->config();
  const std::size_t g = mc.grid_size(), d = mc.vision_dim, p = mc.patch_size;
  const auto frames = sparse_frames(extent[0], config_.temporal_stride);
  Tensor grid = reshape(model_->positional_grid(), {g * g, d});
  std::vector<Tensor> tiles(frames.size(), grid);
  Tensor learned = frames.size() == 1 ? grid : mammut::concat(std::as_const(tiles), std::size_t{0});
  std::vector<std::array<double, 3>> coords;
  for (std::size_t f : frames) {
    for (std::size_t y = 0; y < g; ++y) {
      for (std::size_t x = 0; x < g; ++x) {
        const double half = (static_cast<double>(p) - 1.0) / 2.0;
        coords.push_back({static_cast<double>(f), static_cast<double>(y * p) + half,
                          static_cast<double>(x * p) + half});
      }
    }
  }
  return add(learned, mul(sinusoidal_embedding(coords, d), patch_gate_));
}

Tensor VideoAdapter::tube_positions(const Extent& extent, std::size_t i) const {
  if (i >= tube_proj_.size()) throw ContractError(concat("tube group ", i, " does not exist"));
  const auto& mc = model_->config();
  const auto centers = tube_centers(extent, config_.tubes[i]);
  // Pixel centers map to grid coordinates where cell j is centered at j.
  const double p = static_cast<double>(mc.patch_size), half = (p - 1.0) / 2.0;
  std::vector<std::pair<double, double>> points;
  points.reserve(centers.size());
  for (const auto& c : centers) points.emplace_back((c[1] - half) / p, (c[2] - half) / p);
  Tensor learned = bilinear_sample(model_->positional_grid(), points);
  return add(learned, mul(sinusoidal_embedding(centers, mc.vision_dim), tube_gates_[i]));
}

Tensor VideoAdapter::embed(const std::vector<Video>& videos) const {
  if (videos.empty()) throw ContractError("video batch is empty");
  const Extent extent = extent_of(videos[0]);
  for (const auto& v : videos) {
    if (extent_of(v) != extent) throw DimensionError("videos in a batch differ in extent");
  }
  const std::size_t n = token_count(extent);
  if (n > config_.max_tokens) {
    throw ContractError(concat("video of extent ", extent_string(extent), " yields ", n,
                               " tokens, more than max_tokens ", config_.max_tokens));
  }
  const auto& mc = model_->config();
  const std::size_t b = videos.size();
  std::vector<Tensor> groups;

  std::vector<data::Image> frames;
  const auto picked = sparse_frames(extent[0], config_.temporal_stride);
  for (const auto& v : videos) {
    for (std::size_t f : picked) frames.push_back(v[f]);
  }
  Tensor patches = data::patchify_batch(frames, mc.patch_size);
  patches = reshape(patches, {b, picked.size() * patches.dim(1), patches.dim(2)});
  groups.push_back(add(model_->embed_patches(patches), patch_positions(extent)));

  for (std::size_t i = 0; i < tube_proj_.size(); ++i) {
    std::vector<Tensor> rows;
    for (const auto& v : videos) rows.push_back(extract_tubes(v, config_.tubes[i]));
    Tensor tubes = b == 1 ? rows[0] : mammut::concat(std::as_const(rows), std::size_t{0});
    const std::size_t count = rows[0].dim(0);
    tubes = reshape(tubes, {b, count, config_.tubes[i].token_dim()});
    groups.push_back(add(tube_proj_[i](tubes), tube_positions(extent, i)));
  }
  return groups.size() == 1 ? groups[0] : mammut::concat(std::as_const(groups), std::size_t{1});
}

ImageEncoding VideoAdapter::forward(const std::vector<Video>& videos) const {
  return model_->encode_tokens(embed(videos));
}

}  // namespace mammut::video
