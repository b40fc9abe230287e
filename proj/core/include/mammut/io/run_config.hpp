#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mammut/training/trainer.hpp"
#include "mammut/video/video.hpp"

namespace mammut::io {

struct EvalConfig {
  std::size_t gallery = 256;
  std::size_t caption_examples = 256;
  std::size_t video_examples = 64;
  std::size_t batch = 64;
  std::vector<std::size_t> recall_ks{1, 5, 10};

  void validate() const;
};

/// Everything a run needs besides its seed and run directory.
struct RunConfig {
  MammutConfig model;
  TrainingConfig training;
  video::VideoConfig video;
  EvalConfig eval;
  std::size_t checkpoint_every = 1000;

  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
};

/// Every accepted key with its default, in canonical order.
std::vector<ConfigKey> config_keys();

/// Applies one `key=value` assignment. Unknown keys and malformed values raise
/// ConfigError naming the key.
void set_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& config, const std::string& key);

/// Parses `key=value` lines over the defaults. Blank lines and lines starting
/// with '#' are skipped. Errors name the line number and the key.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);

/// Canonical text form: every key, one per line, in config_keys() order.
std::string to_text(const RunConfig& config);

/// 16 hex digits of FNV-1a over to_text().
std::string fingerprint(const RunConfig& config);

}  // namespace mammut::io
