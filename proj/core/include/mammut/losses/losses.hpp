#pragma once

#include "mammut/data/tokenizer.hpp"
#include "mammut/tensor/tensor.hpp"

namespace mammut {

/// Learnable temperature stored as log(tau), so tau = exp(log_tau) > 0.
struct Temperature {
  Tensor log_tau;  // one element

  /// A trainable temperature starting at tau = 1.
  static Temperature learnable();
  /// A constant (non-trainable) temperature.
  static Temperature fixed(double tau);

  double value() const;
  /// 1 / tau as a differentiable one-element tensor.
  Tensor inverse() const;
};

struct LossWeights {
  double lambda_cap = 1.0;
  double lambda_focal = 1.0;
  double gamma = 2.0;

  void validate() const;
};

enum class ContrastiveObjective { focal, softmax };

const char* contrastive_objective_name(ContrastiveObjective objective);
ContrastiveObjective parse_contrastive_objective(const std::string& name);

/// Image-to-text plus text-to-image softmax cross-entropy over the B x B
/// similarity logits (v l^T) / tau, each averaged over the batch.
Tensor contrastive_loss(const Tensor& v, const Tensor& l, const Temperature& tau);

/// Negative log-likelihood of the next token, summed over the valid target
/// steps of each example and averaged over examples with at least one
/// target. `logits` [B, T, V]; position t scores targets token t + 1.
Tensor captioning_loss(const Tensor& logits, const data::TokenBatch& targets);

/// Pairwise sigmoid focal loss, -(1/B) sum_ij (1 - p_ij)^gamma log p_ij per
/// direction, where p is sigmoid(s_ij / tau) on the diagonal and
/// 1 - sigmoid(s_ij / tau) elsewhere. Returns I2T + T2I.
Tensor focal_contrastive_loss(const Tensor& v, const Tensor& l, const Temperature& tau, double gamma);

Tensor total_loss(const Tensor& caption_loss, const Tensor& contrastive, const LossWeights& weights);

}  // namespace mammut
