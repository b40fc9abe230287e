#include "mammut/losses/losses.hpp"

#include <cmath>

#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"

namespace mammut {

Temperature Temperature::learnable() { return {Tensor::zeros({1}, true)}; }

Temperature Temperature::fixed(double tau) {
  if (!(tau > 0)) throw ContractError(concat("temperature must be positive, got ", tau));
  return {Tensor::full({1}, std::log(tau))};
}

double Temperature::value() const { return std::exp(log_tau.item()); }

Tensor Temperature::inverse() const { return exp(scale(log_tau, -1.0)); }

void LossWeights::validate() const {
  if (lambda_cap < 0 || lambda_focal < 0) {
    throw ConfigError(concat("loss weights must be nonnegative, got cap=", lambda_cap, " focal=", lambda_focal));
  }
  if (lambda_cap == 0 && lambda_focal == 0) throw ConfigError("loss weights cannot both be zero");
  if (gamma < 0) throw ConfigError(concat("focal gamma must be nonnegative, got ", gamma));
}

const char* contrastive_objective_name(ContrastiveObjective objective) {
  return objective == ContrastiveObjective::focal ? "focal" : "softmax";
}

ContrastiveObjective parse_contrastive_objective(const std::string& name) {
  if (name == "focal") return ContrastiveObjective::focal;
  if (name == "softmax") return ContrastiveObjective::softmax;
  throw ConfigError("unknown contrastive objective '" + name + "' (expected focal or softmax)");
}

namespace {

void check_pair(const Tensor& v, const Tensor& l, const char* what) {
  if (v.ndim() != 2 || v.shape() != l.shape()) {
    throw DimensionError(concat(what, ": embeddings ", to_string(v.shape()), " and ", to_string(l.shape()),
                                " must both be [B, d]"));
  }
  if (v.dim(0) == 0) throw ContractError(concat(what, ": empty batch"));
}

Tensor scaled_similarity(const Tensor& v, const Tensor& l, const Temperature& tau) {
  return mul(matmul(v, transpose(l)), tau.inverse());
}

// Mean over rows of -log_softmax(logits)[i, i].
Tensor diagonal_nll(const Tensor& logits) {
  const std::size_t b = logits.dim(0);
  std::vector<std::int32_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = static_cast<std::int32_t>(i);
  return scale(sum(gather_last(log_softmax(logits), diag)), -1.0 / static_cast<double>(b));
}

Tensor focal_direction(const Tensor& logits, const Tensor& signs, double gamma) {
  const std::size_t b = logits.dim(0);
  Tensor z = mul(logits, signs);
  Tensor log_p = log_sigmoid(z);
  Tensor terms = gamma == 0 ? log_p : mul(exp(scale(log_sigmoid(scale(z, -1.0)), gamma)), log_p);
  return scale(sum(terms), -1.0 / static_cast<double>(b));
}

}  // namespace

Tensor contrastive_loss(const Tensor& v, const Tensor& l, const Temperature& tau) {
  check_pair(v, l, "contrastive_loss");
  Tensor logits = scaled_similarity(v, l, tau);
  return add(diagonal_nll(logits), diagonal_nll(transpose(logits)));
}

Tensor captioning_loss(const Tensor& logits, const data::TokenBatch& targets) {
  if (logits.ndim() != 3 || logits.dim(0) != targets.batch || logits.dim(1) != targets.length) {
    throw DimensionError(concat("captioning_loss: logits ", to_string(logits.shape()), " do not match tokens [",
                                targets.batch, ",", targets.length, "]"));
  }
  const std::size_t b = targets.batch, t = targets.length;
  std::vector<std::int32_t> index(b * t, 0);
  std::vector<double> weight(b * t, 0.0);
  std::size_t examples = 0;
  for (std::size_t i = 0; i < b; ++i) {
    bool any = false;
    for (std::size_t s = 0; s + 1 < t; ++s) {
      if (!targets.is_valid(i, s + 1)) continue;
      const std::int32_t id = targets.at(i, s + 1);
      if (id < 0 || static_cast<std::size_t>(id) >= logits.dim(2)) {
        throw ContractError(concat("captioning_loss: target id ", id, " outside vocabulary of ", logits.dim(2)));
      }
      index[i * t + s] = id;
      weight[i * t + s] = 1.0;
      any = true;
    }
    examples += any ? 1 : 0;
  }
  if (examples == 0) throw ContractError("captioning_loss: batch has no valid target tokens");
  Tensor picked = gather_last(log_softmax(logits), index);
  Tensor w = Tensor::from(picked.shape(), weight);
  return scale(sum(mul(picked, w)), -1.0 / static_cast<double>(examples));
}

Tensor focal_contrastive_loss(const Tensor& v, const Tensor& l, const Temperature& tau, double gamma) {
  check_pair(v, l, "focal_contrastive_loss");
  if (gamma < 0) throw ContractError(concat("focal_contrastive_loss: gamma must be nonnegative, got ", gamma));
  const std::size_t b = v.dim(0);
  std::vector<double> sign(b * b, -1.0);
  for (std::size_t i = 0; i < b; ++i) sign[i * b + i] = 1.0;
  Tensor signs = Tensor::from({b, b}, sign);
  Tensor logits = scaled_similarity(v, l, tau);
  return add(focal_direction(logits, signs, gamma), focal_direction(transpose(logits), signs, gamma));
}

Tensor total_loss(const Tensor& caption_loss, const Tensor& contrastive, const LossWeights& weights) {
  return add(scale(caption_loss, weights.lambda_cap), scale(contrastive, weights.lambda_focal));
}

}  // namespace mammut
