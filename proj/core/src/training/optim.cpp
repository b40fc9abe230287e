#include "mammut/training/optim.hpp"

#include <cmath>

#include "mammut/errors.hpp"

namespace mammut {

void Schedule::validate() const {
  if (!(warmup_steps > 0 && warmup_steps < total_steps)) {
    throw ConfigError(concat("schedule: need 0 < warmup_steps < total_steps, got ", warmup_steps, " and ",
                             total_steps));
  }
  if (!(peak_lr > 0)) throw ConfigError(concat("schedule: peak_lr must be positive, got ", peak_lr));
}

double lr_at(std::size_t step, const Schedule& s) {
  if (step > s.total_steps) {
    throw ContractError(concat("lr_at: step ", step, " beyond total_steps ", s.total_steps));
  }
  if (step <= s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  return s.peak_lr * static_cast<double>(s.total_steps - step) /
         static_cast<double>(s.total_steps - s.warmup_steps);
}

bool decays(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with(".bias") || ends_with(".gain") || ends_with("log_tau") || name.find("gate") != std::string::npos);
}

AdamW::AdamW(const ParameterStore& params, AdamWConfig config) : config_(config) {
  for (const auto& [name, t] : params.entries()) {
    moments_.push_back({name, Buffer(t.precision(), t.numel()), Buffer(t.precision(), t.numel())});
  }
}

void AdamW::step(ParameterStore& params, double lr) {
  const auto& entries = params.entries();
  if (entries.size() != moments_.size()) {
    throw ContractError(concat("AdamW: optimizer tracks ", moments_.size(), " parameters, model has ",
                               entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = entries[i];
    if (moments_[i].name != name) {
      throw ContractError("AdamW: parameter order changed at '" + name + "'");
    }
    if (!t.has_grad()) continue;
    const Buffer& g = t.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g.get(k))) {
        throw NumericError(concat("non-finite gradient in parameter '", name, "' at element ", k));
      }
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor t = entries[i].second;
    const double wd = decays(entries[i].first) ? config_.weight_decay : 0.0;
    const double rate = entries[i].first.ends_with("log_tau") ? lr * config_.temperature_lr_scale : lr;
    const bool has_grad = t.has_grad();
    dispatch(t.precision(), [&]<class T>() {
      auto theta = t.mutable_data<T>();
      auto m = moments_[i].m.as<T>();
      auto v = moments_[i].v.as<T>();
      std::span<const T> g;
      if (has_grad) g = std::as_const(t).grad_buffer().template as<T>();
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const T gk = has_grad ? g[k] : T(0);
        m[k] = static_cast<T>(b1 * m[k] + (1 - b1) * gk);
        v[k] = static_cast<T>(b2 * v[k] + (1 - b2) * gk * gk);
        const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
        theta[k] = static_cast<T>(theta[k] - rate * wd * theta[k] - rate * update);
      }
    });
  }
}

double global_grad_norm(const ParameterStore& params) {
  double total = 0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.has_grad()) continue;
    const Buffer& g = t.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) total += g.get(k) * g.get(k);
  }
  return std::sqrt(total);
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params.entries()) {
      if (!t.has_grad()) continue;
      Tensor handle = t;
      dispatch(handle.precision(), [&]<class T>() {
        for (auto& g : handle.mutable_grad_buffer().template as<T>()) g = static_cast<T>(g * factor);
      });
    }
  }
  return norm;
}

}  // namespace mammut
