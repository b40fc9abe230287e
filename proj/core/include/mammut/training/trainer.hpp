#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "mammut/data/cpe.hpp"
#include "mammut/data/scene.hpp"
#include "mammut/data/tokenizer.hpp"
#include "mammut/losses/losses.hpp"
#include "mammut/model/mammut.hpp"
#include "mammut/tensor/gradcheck.hpp"
#include "mammut/training/optim.hpp"

namespace mammut {

struct DataConfig {
  data::SceneConfig scene;
  /// Images are resized to resize_to and randomly cropped back to the model
  /// image size when augment is on.
  bool augment = true;
  std::size_t resize_to = 38;
  /// CPE runs during the final cpe_fraction of total steps.
  double cpe_fraction = 1.0 / 6.0;
  std::size_t cpe_upsample = 16;
  data::CropSampling crop;
};

struct TrainingConfig {
  Schedule schedule;
  AdamWConfig adamw;
  LossWeights weights;
  ContrastiveObjective objective = ContrastiveObjective::focal;
  std::size_t batch_size = 64;
  double clip_norm = 1.0;
  /// Alternate single-objective steps (even: contrastive, odd: generative)
  /// instead of one joint backward per step.
  bool alternating = false;
  DataConfig data;

  void validate() const;
};

struct Batch {
  Tensor patches;  // [B, P, 3p^2]
  data::TokenBatch tokens;
  std::vector<std::uint64_t> seeds;
  std::optional<data::CropRect> cpe;
};

/// Random training batches drawn from the train split.
class BatchSampler {
 public:
  BatchSampler(const MammutConfig& model, const DataConfig& data);

  const data::Vocabulary& vocabulary() const { return vocab_; }
  Batch sample(std::size_t batch_size, std::mt19937_64& rng, bool cpe) const;
  /// A batch of the given scene seeds, without augmentation or CPE.
  Batch fixed(const std::vector<std::uint64_t>& seeds) const;

 private:
  MammutConfig model_;
  DataConfig data_;
  data::Vocabulary vocab_;
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double loss_total = 0;
  double loss_cap = 0;
  double loss_focal = 0;
  double tau = 0;
  double grad_norm = 0;
};

struct Objectives {
  Tensor captioning;
  Tensor contrastive;
};

/// Both passes on one batch: the image is encoded once and its projected
/// tokens feed the generative pass.
Objectives compute_objectives(const Mammut& model, const Batch& batch, const TrainingConfig& config);

/// One optimizer step at schedule position `step` (0-based; uses
/// lr_at(step + 1)).
StepMetrics train_step(Mammut& model, AdamW& optimizer, const Batch& batch, const TrainingConfig& config,
                       std::size_t step);

/// Whether CPE is active at 0-based `step`.
bool cpe_active(std::size_t step, const TrainingConfig& config);

/// Owns a model, its optimizer and the training RNG.
class Trainer {
 public:
  Trainer(const MammutConfig& model, const TrainingConfig& config, std::uint64_t seed);

  Mammut& model() { return model_; }
  const Mammut& model() const { return model_; }
  AdamW& optimizer() { return optimizer_; }
  const AdamW& optimizer() const { return optimizer_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  const TrainingConfig& config() const { return config_; }
  const BatchSampler& sampler() const { return sampler_; }
  std::size_t step() const { return step_; }
  void set_step(std::size_t step) { step_ = step; }

  StepMetrics run_step();
  /// Runs until `until` steps are done, calling `on_step` after each.
  void run(std::size_t until, const std::function<void(const StepMetrics&)>& on_step = {});

 private:
  Mammut model_;
  TrainingConfig config_;
  AdamW optimizer_;
  BatchSampler sampler_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
};

/// Trains repeatedly on one batch. Throws NumericError when the total loss
/// exceeds 10x its initial value.
std::vector<StepMetrics> overfit_single_batch(Mammut& model, const Batch& batch, const TrainingConfig& config,
                                              std::size_t steps);

/// Finite-difference check of the joint two-pass loss with respect to every
/// parameter of a small 64-bit model on a 2-pair batch. Attention key biases,
/// whose gradient vanishes identically, must come out exactly zero instead.
GradcheckResult two_pass_gradcheck(std::uint64_t seed, double h = 1e-3);

/// CSV metrics stream: step,lr,loss_total,loss_cap,loss_focal,tau,grad_norm.
class MetricsWriter {
 public:
  /// Writes the header line unless appending to an existing stream.
  explicit MetricsWriter(std::vector<std::ostream*> sinks, bool write_header = true);
  void write(const StepMetrics& m);

  static const char* header();

 private:
  std::vector<std::ostream*> sinks_;
};

}  // namespace mammut
