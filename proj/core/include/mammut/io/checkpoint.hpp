#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mammut/io/run_config.hpp"

namespace mammut::io {

inline constexpr const char* kCheckpointMagic = "MAMMUT1";

// Layout (integers little-endian u64, strings u64 length + bytes):
//   "MAMMUT1\n"
//   string  config text (to_text form)
//   u64     value width in bytes (4 or 8)
//   u64     step
//   string  RNG state (std::mt19937_64 text form)
//   u64     parameter count, then per parameter:
//             string name, u64 rank, rank x u64 extents, values
//   u64     optimizer step count
//   u64     moment count, then per entry: string name, u64 n, n m values, n v values
//   u64     FNV-1a 64 of every preceding byte

struct NamedArray {
  std::string name;
  Shape shape;
  Buffer values;
};

struct OptimizerMoments {
  std::string name;
  Buffer m, v;
};

struct Checkpoint {
  std::string config_text;
  Precision precision = Precision::f32;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedArray> parameters;
  std::uint64_t optimizer_steps = 0;
  std::vector<OptimizerMoments> moments;

  RunConfig config() const;
};

/// Snapshot of a model and (optionally) its optimizer and RNG.
Checkpoint capture(const RunConfig& config, const Mammut& model, const AdamW* optimizer,
                   const std::mt19937_64* rng, std::uint64_t step);
Checkpoint capture(const RunConfig& config, const Trainer& trainer);

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint);
/// Raises CheckpointError on a bad magic, truncation, or checksum mismatch.
Checkpoint read_checkpoint(const std::string& path);

struct LoadReport {
  /// Model parameters the checkpoint does not hold.
  std::vector<std::string> missing;
  /// Checkpoint entries the model does not hold.
  std::vector<std::string> unexpected;
};

/// Copies parameters into `model`. Name mismatches raise CheckpointError
/// unless `allow_partial`; shape mismatches always do. Values convert to the
/// model's precision.
LoadReport load_parameters(const Checkpoint& checkpoint, Mammut& model, bool allow_partial);

/// Restores parameters, optimizer moments, RNG and step into a trainer.
void restore(const Checkpoint& checkpoint, Trainer& trainer);

/// FNV-1a 64 of the file contents, as 16 hex digits.
std::string file_hash(const std::string& path);

}  // namespace mammut::io
