#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mammut/model/layers.hpp"

namespace mammut {

struct Schedule {
  std::size_t warmup_steps = 500;
  std::size_t total_steps = 20000;
  double peak_lr = 3e-4;

  void validate() const;
};

/// Linear warmup from 0 to peak over warmup_steps, then linear decay to 0 at
/// total_steps.
double lr_at(std::size_t step, const Schedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Learning-rate multiplier for the temperature parameter.
  double temperature_lr_scale = 1.0;
};

/// Parameters exempt from weight decay: biases, normalization gains,
/// the temperature and gates.
bool decays(const std::string& parameter_name);

/// Decoupled-weight-decay Adam. Moments live at the parameter precision.
class AdamW {
 public:
  AdamW(const ParameterStore& params, AdamWConfig config = {});

  /// One update of every parameter; missing gradients count as zero.
  /// A non-finite gradient raises NumericError naming the parameter.
  void step(ParameterStore& params, double lr);

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

  struct Moments {
    std::string name;
    Buffer m, v;
  };
  const std::vector<Moments>& moments() const { return moments_; }
  std::vector<Moments>& moments() { return moments_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  AdamWConfig config_;
  std::vector<Moments> moments_;
  std::size_t steps_ = 0;
};

/// Global L2 norm of all parameter gradients.
double global_grad_norm(const ParameterStore& params);
/// Rescales gradients so the global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace mammut
