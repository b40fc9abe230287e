#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mammut/data/image.hpp"
#include "mammut/model/mammut.hpp"

namespace mammut::video {

/// Frames of equal size, in time order.
using Video = std::vector<data::Image>;

/// Extent of a video as (frames, height, width).
using Extent = std::array<std::size_t, 3>;

/// A 3-D tube shape; every field is (t, h, w).
struct TubeSpec {
  Extent kernel{1, 1, 1};
  Extent stride{1, 1, 1};
  Extent offset{0, 0, 0};

  /// Tubes along each axis: floor((extent - kernel - offset) / stride + 1).
  Extent grid(const Extent& extent) const;
  std::size_t count(const Extent& extent) const;
  std::size_t token_dim() const { return kernel[0] * kernel[1] * kernel[2] * data::Image::channels; }
  void validate(const Extent& extent) const;
};

Extent extent_of(const Video& video);

/// Tube tokens [n_tubes, t*h*w*3] in row-major (t, y, x) tube order, each
/// flattened in (t, y, x, channel) order.
Tensor extract_tubes(const Video& video, const TubeSpec& spec);

/// Center (t, y, x) of every tube in pixel and frame units.
std::vector<std::array<double, 3>> tube_centers(const Extent& extent, const TubeSpec& spec);

/// Indices of the frames 0, s, 2s, ... below the frame count.
std::vector<std::size_t> sparse_frames(std::size_t frames, std::size_t temporal_stride);

/// Image patches of frames 0, s, 2s, ...: [F * P, 3p^2], frame-major.
Tensor sparse_frame_patches(const Video& video, std::size_t patch, std::size_t temporal_stride);

/// Fixed sinusoidal embedding [N, dim] of (t, y, x) coordinates. Each axis
/// owns 2*floor(dim/6) channels of interleaved sin/cos at frequencies
/// base^(-2k/c); leftover channels are zero.
Tensor sinusoidal_embedding(const std::vector<std::array<double, 3>>& coords, std::size_t dim,
                            double base = 10000.0);

enum class GateMode { scalar, per_channel };

const char* gate_mode_name(GateMode mode);
GateMode parse_gate_mode(const std::string& name);

/// Two tube shapes: long-thin (8,4,4) and short-fat (2,8,8).
std::vector<TubeSpec> default_tubes();

struct VideoConfig {
  std::size_t frames = 8;
  std::size_t temporal_stride = 4;
  bool use_tubes = true;
  std::vector<TubeSpec> tubes = default_tubes();
  GateMode gate = GateMode::scalar;
  std::size_t max_tokens = 256;

  void validate(const MammutConfig& model) const;
};

/// Tube projections and positional gates added to an image model. Video
/// tokens (sparse frame patches and tubes) carry learned + gate * fixed
/// positional embeddings and run through the image encoder once.
class VideoAdapter {
 public:
  /// Registers the new parameters in `model.parameters()`: one projection
  /// per tube shape (video.tube{i}.*) and one gate per token group
  /// (video.gate.patches, video.gate.tube{i}), gates initialized to 0.
  VideoAdapter(Mammut& model, VideoConfig config);

  const VideoConfig& config() const { return config_; }
  const Mammut& model() const { return *model_; }

  /// Names of the parameters the adapter adds.
  static std::vector<std::string> parameter_names(const VideoConfig& config);

  /// Sequence length for a video of the given extent.
  std::size_t token_count(const Extent& extent) const;

  /// Positional embeddings [N, vision_dim] of the patch group and of tube
  /// group `i`.
  Tensor patch_positions(const Extent& extent) const;
  Tensor tube_positions(const Extent& extent, std::size_t i) const;

  /// Embedded tokens [B, N, vision_dim] with positions, before the encoder.
  Tensor embed(const std::vector<Video>& videos) const;
  ImageEncoding forward(const std::vector<Video>& videos) const;

 private:
  Mammut* model_;
  VideoConfig config_;
  std::vector<Linear> tube_proj_;
  Tensor patch_gate_;
  std::vector<Tensor> tube_gates_;
};

}  // namespace mammut::video
