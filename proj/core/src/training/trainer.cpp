#include "mammut/training/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "mammut/data/corpus.hpp"
#include "mammut/data/image.hpp"
#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"
#include "mammut/tensor/parallel.hpp"

namespace mammut {

void TrainingConfig::validate() const {
  schedule.validate();
  weights.validate();
  data.scene.validate();
  if (batch_size < 2) throw ConfigError(concat("training: batch_size must be at least 2, got ", batch_size));
  if (!(adamw.temperature_lr_scale > 0)) throw ConfigError("training: temperature_lr_scale must be positive");
  if (!(clip_norm > 0)) throw ConfigError("training: clip_norm must be positive");
  if (data.cpe_fraction < 0 || data.cpe_fraction > 1) throw ConfigError("training: cpe_fraction must be in [0, 1]");
}

namespace {

// Rows are padded to the longest row of the batch.
std::size_t padded_length(const std::vector<std::vector<std::int32_t>>& rows, std::size_t limit) {
  std::size_t n = 1;
  for (const auto& r : rows) n = std::max(n, r.size());
  if (n > limit) throw ContractError(concat("caption of ", n, " tokens exceeds max_text_len ", limit));
  return n;
}

}  // namespace

BatchSampler::BatchSampler(const MammutConfig& model, const DataConfig& data)
    : model_(model), data_(data), vocab_(data::Vocabulary::for_scenes(data.scene)) {
  if (data.scene.canvas != model.image_size) {
    throw ConfigError(concat("scene canvas ", data.scene.canvas, " differs from model image size ", model.image_size));
  }
  if (vocab_.size() > model.vocab_size) {
    throw ConfigError(concat("corpus vocabulary has ", vocab_.size(), " tokens, model vocab_size is ",
                             model.vocab_size));
  }
  if (data.augment && data.resize_to < model.image_size) {
    throw ConfigError(concat("resize_to ", data.resize_to, " is smaller than image size ", model.image_size));
  }
}

Batch BatchSampler::fixed(const std::vector<std::uint64_t>& seeds) const {
  Batch batch;
  std::vector<data::Image> images;
  std::vector<std::vector<std::int32_t>> rows;
  for (std::uint64_t seed : seeds) {
    auto scene = data::synthesize_pair(seed, data_.scene);
    images.push_back(std::move(scene.canvas));
    rows.push_back(vocab_.tokenize(scene.caption));
  }
  batch.patches = data::patchify_batch(images, model_.patch_size);
  batch.tokens = data::TokenBatch::from_rows(rows, padded_length(rows, model_.max_text_len));
  batch.seeds = seeds;
  return batch;
}

Batch BatchSampler::sample(std::size_t batch_size, std::mt19937_64& rng, bool cpe) const {
  auto [lo, hi] = data::seed_range(data::Split::train);
  std::uniform_int_distribution<std::uint64_t> seed_dist(lo, hi - 1);
  Batch batch;
  std::vector<data::Image> images;
  std::vector<std::vector<std::int32_t>> rows;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t seed = seed_dist(rng);
    auto scene = data::synthesize_pair(seed, data_.scene);
    if (data_.augment) {
      images.push_back(data::resize_random_crop(scene.canvas, data_.resize_to, model_.image_size, rng));
    } else {
      images.push_back(std::move(scene.canvas));
    }
    rows.push_back(vocab_.tokenize(scene.caption));
    batch.seeds.push_back(seed);
  }
  batch.patches = data::patchify_batch(images, model_.patch_size);
  batch.tokens = data::TokenBatch::from_rows(rows, padded_length(rows, model_.max_text_len));
  if (cpe) batch.cpe = data::sample_crop(data_.cpe_upsample, data_.crop, rng);
  return batch;
}

Objectives compute_objectives(const Mammut& model, const Batch& batch, const TrainingConfig& config) {
  if (batch.tokens.batch < 2) throw ContractError("train_step: batch needs at least 2 pairs");
  Tensor grid = model.positional_grid();
  if (batch.cpe) {
    grid = data::cropped_positional_embedding(grid, config.data.cpe_upsample, *batch.cpe,
                                              model.config().grid_size());
  }
  ImageEncoding enc = model.encode_image(batch.patches, grid);
  Tensor l = model.contrastive_pass(batch.tokens);
  Objectives out;
  out.contrastive = config.objective == ContrastiveObjective::focal
                        ? focal_contrastive_loss(enc.v, l, model.temperature(), config.weights.gamma)
                        : contrastive_loss(enc.v, l, model.temperature());
  out.captioning = captioning_loss(model.generative_pass(batch.tokens, enc.visual), batch.tokens);
  return out;
}

bool cpe_active(std::size_t step, const TrainingConfig& config) {
  const auto total = static_cast<double>(config.schedule.total_steps);
  return config.data.cpe_fraction > 0 &&
         static_cast<double>(step) >= total * (1.0 - config.data.cpe_fraction);
}

StepMetrics train_step(Mammut& model, AdamW& optimizer, const Batch& batch, const TrainingConfig& config,
                       std::size_t step) {
  ParameterStore& params = model.parameters();
  params.zero_grad();
  Objectives obj = compute_objectives(model, batch, config);
  const auto& w = config.weights;
  bool use_cap = w.lambda_cap != 0, use_con = w.lambda_focal != 0;
  if (config.alternating) {
    const bool contrastive_turn = step % 2 == 0;
    use_cap = use_cap && !contrastive_turn;
    use_con = use_con && contrastive_turn;
  }
  Tensor total;
  if (use_cap && use_con) {
    total = total_loss(obj.captioning, obj.contrastive, w);
  } else if (use_cap) {
    total = scale(obj.captioning, w.lambda_cap);
  } else if (use_con) {
    total = scale(obj.contrastive, w.lambda_focal);
  }
  StepMetrics m;
  m.step = step + 1;
  m.lr = lr_at(step + 1, config.schedule);
  m.loss_cap = obj.captioning.item();
  m.loss_focal = obj.contrastive.item();
  m.loss_total = w.lambda_cap * m.loss_cap + w.lambda_focal * m.loss_focal;
  if (!std::isfinite(m.loss_total)) throw NumericError(concat("non-finite loss at step ", m.step));
  if (total.defined()) {
    backward(total);
    m.grad_norm = clip_grad_norm(params, config.clip_norm);
  }
  optimizer.step(params, m.lr);
  m.tau = model.temperature().value();
  return m;
}

Trainer::Trainer(const MammutConfig& model, const TrainingConfig& config, std::uint64_t seed)
    : model_([&] {
        MammutConfig c = model;
        c.init_seed = seed;
        return c;
      }()),
      config_(config),
      optimizer_(model_.parameters(), config.adamw),
      sampler_(model, config.data),
      rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  retain_freed_memory();
}

StepMetrics Trainer::run_step() {
  if (step_ >= config_.schedule.total_steps) {
    throw ContractError(concat("training already finished at step ", step_));
  }
  Batch batch = sampler_.sample(config_.batch_size, rng_, cpe_active(step_, config_));
  StepMetrics m = train_step(model_, optimizer_, batch, config_, step_);
  ++step_;
  return m;
}

void Trainer::run(std::size_t until, const std::function<void(const StepMetrics&)>& on_step) {
  while (step_ < until) {
    StepMetrics m = run_step();
    if (on_step) on_step(m);
  }
}

std::vector<StepMetrics> overfit_single_batch(Mammut& model, const Batch& batch, const TrainingConfig& config,
                                              std::size_t steps) {
  AdamW optimizer(model.parameters(), config.adamw);
  std::vector<StepMetrics> out;
  for (std::size_t s = 0; s < steps; ++s) {
    out.push_back(train_step(model, optimizer, batch, config, s));
    if (out.back().loss_total > 10 * out.front().loss_total) {
      throw NumericError(concat("overfit diverged at step ", s + 1, ": loss ", out.back().loss_total,
                                " exceeds 10x initial ", out.front().loss_total));
    }
  }
  return out;
}

MetricsWriter::MetricsWriter(std::vector<std::ostream*> sinks, bool write_header) : sinks_(std::move(sinks)) {
  if (!write_header) return;
  for (auto* s : sinks_) *s << header() << '\n';
}

const char* MetricsWriter::header() { return "step,lr,loss_total,loss_cap,loss_focal,tau,grad_norm"; }

void MetricsWriter::write(const StepMetrics& m) {
  char line[256];
  std::snprintf(line, sizeof(line), "%zu,%.6g,%.6f,%.6f,%.6f,%.6f,%.6f", m.step, m.lr, m.loss_total, m.loss_cap,
                m.loss_focal, m.tau, m.grad_norm);
  for (auto* s : sinks_) *s << line << '\n' << std::flush;
}

GradcheckResult two_pass_gradcheck(std::uint64_t seed, double h) {
  PrecisionScope f64(Precision::f64);
  MammutConfig mc;
  mc.image_size = 16;
  mc.patch_size = 8;
  mc.vision_layers = 1;
  mc.vision_dim = 8;
  mc.vision_heads = 2;
  mc.decoder_layers = 2;
  mc.decoder_dim = 8;
  mc.decoder_heads = 2;
  mc.cross_attention_every_k = 2;
  mc.vocab_size = 16;
  mc.max_text_len = 20;
  // Away from the near-uniform attention of the default init, so that no
  // gradient entry is small enough to drown in rounding.
  mc.init_std = 0.2;
  mc.init_seed = seed;
  TrainingConfig tc;
  tc.data.scene.canvas = 16;
  tc.data.resize_to = 20;
  Mammut model(mc);
  BatchSampler sampler(mc, tc.data);
  const Batch batch = sampler.fixed({seed, seed + 1});
  const auto loss = [&] {
    Objectives obj = compute_objectives(model, batch, tc);
    return total_loss(obj.captioning, obj.contrastive, tc.weights);
  };

  // Attention key biases shift every score of a query row equally, so their
  // gradient is exactly zero; they are held to that instead.
  std::vector<Tensor> inputs, key_biases;
  for (const auto& [name, t] : model.parameters().entries()) {
    (name.ends_with(".k.bias") ? key_biases : inputs).push_back(t);
  }
  GradcheckResult r;
  r.name = "two_pass_loss";
  r.tolerance = 1e-4;
  r.covers_op = true;
  r.max_rel_error = finite_diff_check(loss, inputs, h);
  model.parameters().zero_grad();
  backward(loss());
  for (const auto& t : key_biases) {
    for (double g : t.grad_vector()) {
      if (std::abs(g) > 1e-10) r.max_rel_error = std::max(r.max_rel_error, 1.0);
    }
  }
  return r;
}

}  // namespace mammut
