#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mammut/errors.hpp"
#include "mammut/losses/losses.hpp"
#include "mammut/tensor/gradcheck.hpp"
#include "mammut/tensor/ops.hpp"

namespace mammut {
namespace {

using data::TokenBatch;

Tensor unit_rows(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(b * d);
  for (std::size_t i = 0; i < b; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < d; ++j) norm += (v[i * d + j] = n(rng)) * v[i * d + j];
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] /= std::sqrt(norm);
  }
  return Tensor::from({b, d}, v);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  auto v = x.to_vector();
  const std::size_t d = x.dim(1);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy_n(v.begin() + perm[i] * d, d, out.begin() + i * d);
  return Tensor::from(x.shape(), out);
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(Temperature, StartsAtOneAndStaysPositive) {
  Temperature t = Temperature::learnable();
  EXPECT_EQ(t.value(), 1.0);
  t.log_tau.mutable_buffer().set(0, -50.0);
  EXPECT_GT(t.value(), 0.0);
  EXPECT_THROW(Temperature::fixed(0.0), ContractError);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  EXPECT_THROW((LossWeights{0.0, 0.0, 2.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-1.0, 1.0, 2.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1.0, 1.0, -0.5}.validate()), ConfigError);
}

TEST(ContrastiveLoss, SinglePairIsZero) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(contrastive_loss(unit_rows(1, 4, rng), unit_rows(1, 4, rng), Temperature::fixed(1)).item(), 0.0);
}

TEST(ContrastiveLoss, OrthonormalPairsOracle) {
  PrecisionScope f64(Precision::f64);
  Tensor e = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(contrastive_loss(e, e, Temperature::fixed(1)).item(), 2 * std::log(1 + std::exp(-1.0)), 1e-6);
}

TEST(ContrastiveLoss, IdenticalRowsGiveTwoLogB) {
  for (std::size_t b : {2u, 4u, 8u}) {
    std::mt19937_64 rng(b);
    Tensor one = unit_rows(1, 5, rng);
    auto row = one.to_vector();
    std::vector<double> rep;
    for (std::size_t i = 0; i < b; ++i) rep.insert(rep.end(), row.begin(), row.end());
    Tensor v = Tensor::from({b, 5}, rep);
    Tensor other = unit_rows(1, 5, rng);
    auto orow = other.to_vector();
    std::vector<double> lrep;
    for (std::size_t i = 0; i < b; ++i) lrep.insert(lrep.end(), orow.begin(), orow.end());
    EXPECT_NEAR(contrastive_loss(v, Tensor::from({b, 5}, lrep), Temperature::fixed(0.3)).item(),
                2 * std::log(static_cast<double>(b)), 1e-5);
  }
}

TEST(ContrastiveLoss, NonNegativeAndPermutationAndSwapInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng() % 6;
    Tensor v = unit_rows(b, 6, rng), l = unit_rows(b, 6, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Temperature tau = Temperature::fixed(0.5);
    const double base = contrastive_loss(v, l, tau).item();
    EXPECT_GE(base, 0.0);
    EXPECT_NEAR(contrastive_loss(permute_rows(v, perm), permute_rows(l, perm), tau).item(), base, 1e-6);
    EXPECT_NEAR(contrastive_loss(l, v, tau).item(), base, 1e-6);
  }
}

TEST(ContrastiveLoss, EmptyBatchIsError) {
  EXPECT_THROW(contrastive_loss(Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), Temperature::fixed(1)),
               Error);
}

TEST(CaptioningLoss, UniformLogitsGiveStepsTimesLogV) {
  auto targets = TokenBatch::from_rows({{1, 3, 4, 5, 2}}, 7);
  Tensor logits = Tensor::zeros({1, 7, 8});
  EXPECT_NEAR(captioning_loss(logits, targets).item(), 4 * std::log(8.0), 1e-6);
}

TEST(CaptioningLoss, ConfidentCorrectLogitsApproachZero) {
  auto targets = TokenBatch::from_rows({{1, 3, 2}}, 3);
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 10.0, 20.0}) {
    std::vector<double> v(3 * 5, 0.0);
    v[0 * 5 + 3] = margin;
    v[1 * 5 + 2] = margin;
    const double loss = captioning_loss(Tensor::from({1, 3, 5}, v), targets).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(CaptioningLoss, MatchesScalarLoopOracle) {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng() % 4, t = 2 + rng() % 6, vocab = 4 + rng() % 6;
    std::vector<std::vector<std::int32_t>> rows;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::int32_t> row{1};
      const std::size_t len = 1 + rng() % t;
      while (row.size() < len) row.push_back(static_cast<std::int32_t>(rng() % vocab));
      rows.push_back(row);
    }
    rows[0].resize(std::max<std::size_t>(rows[0].size(), 2), 2);
    auto targets = TokenBatch::from_rows(rows, t);
    std::vector<double> lv(b * t * vocab);
    for (auto& x : lv) x = n(rng);
    double total = 0;
    std::size_t examples = 0;
    for (std::size_t i = 0; i < b; ++i) {
      double nll = 0;
      bool any = false;
      for (std::size_t s = 0; s + 1 < rows[i].size(); ++s) {
        const double* row = &lv[(i * t + s) * vocab];
        double mx = row[0];
        for (std::size_t k = 1; k < vocab; ++k) mx = std::max(mx, row[k]);
        double z = 0;
        for (std::size_t k = 0; k < vocab; ++k) z += std::exp(row[k] - mx);
        nll -= row[rows[i][s + 1]] - mx - std::log(z);
        any = true;
      }
      if (any) {
        total += nll;
        ++examples;
      }
    }
    EXPECT_NEAR(captioning_loss(Tensor::from({b, t, vocab}, lv), targets).item(), total / examples, 1e-6);
  }
}

TEST(CaptioningLoss, AllPadIsErrorAndEmptyExamplesAreExcluded) {
  EXPECT_THROW(captioning_loss(Tensor::zeros({2, 3, 4}), TokenBatch::from_rows({{1}, {}}, 3)), ContractError);
  // The second example has no targets, so the mean is over one example.
  auto targets = TokenBatch::from_rows({{1, 3, 2}, {1}}, 3);
  EXPECT_NEAR(captioning_loss(Tensor::zeros({2, 3, 4}), targets).item(), 2 * std::log(4.0), 1e-6);
}

TEST(FocalLoss, GammaZeroSingleOrthogonalPair) {
  Tensor v = Tensor::from({1, 2}, {1, 0}), l = Tensor::from({1, 2}, {0, 1});
  EXPECT_NEAR(focal_contrastive_loss(v, l, Temperature::fixed(1), 0).item(), 2 * std::log(2.0), 1e-6);
  EXPECT_NEAR(focal_contrastive_loss(v, l, Temperature::fixed(1), 0).item(), 1.3863, 1e-4);
}

TEST(FocalLoss, GammaTwoSingleOrthogonalPair) {
  Tensor v = Tensor::from({1, 2}, {1, 0}), l = Tensor::from({1, 2}, {0, 1});
  const double per_direction = -0.25 * std::log(0.5);
  EXPECT_NEAR(per_direction, 0.1733, 1e-4);
  EXPECT_NEAR(focal_contrastive_loss(v, l, Temperature::fixed(1), 2).item(), 2 * per_direction, 1e-6);
}

TEST(FocalLoss, GammaZeroEqualsBinaryCrossEntropy) {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 1 + rng() % 8;
    Tensor v = unit_rows(b, 5, rng), l = unit_rows(b, 5, rng);
    const double tau = 0.05 + 0.01 * static_cast<double>(rng() % 100);
    auto vv = v.to_vector(), lv = l.to_vector();
    // Binary cross-entropy with label 1 on matching pairs, 0 elsewhere,
    // summed over pairs and divided by B, for each direction.
    double bce = 0;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += vv[i * 5 + k] * lv[j * 5 + k];
        const double q = sigmoid_ref(s / tau);
        const double label = i == j ? 1.0 : 0.0;
        bce -= label * std::log(q) + (1 - label) * std::log1p(-q);
      }
    }
    const double expected = 2 * bce / static_cast<double>(b);
    EXPECT_NEAR(focal_contrastive_loss(v, l, Temperature::fixed(tau), 0).item(), expected, 1e-8);
  }
}

TEST(FocalLoss, NonIncreasingInGammaWhenConfident) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng() % 4;
    // Orthonormal-ish aligned pairs with a small temperature give p > 0.5 everywhere.
    std::vector<double> e(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) e[i * b + i] = 1.0;
    Tensor v = Tensor::from({b, b}, e);
    double previous = 1e9;
    for (double gamma : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
      const double loss = focal_contrastive_loss(v, v, Temperature::fixed(0.5), gamma).item();
      EXPECT_LE(loss, previous + 1e-12);
      previous = loss;
    }
  }
}

TEST(FocalLoss, PermutationAndSwapInvariant) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng() % 6;
    Tensor v = unit_rows(b, 4, rng), l = unit_rows(b, 4, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Temperature tau = Temperature::fixed(0.2);
    const double base = focal_contrastive_loss(v, l, tau, 2).item();
    EXPECT_NEAR(focal_contrastive_loss(permute_rows(v, perm), permute_rows(l, perm), tau, 2).item(), base, 1e-6);
    EXPECT_NEAR(focal_contrastive_loss(l, v, tau, 2).item(), base, 1e-6);
  }
}

TEST(FocalLoss, NegativeGammaIsError) {
  Tensor v = Tensor::from({1, 1}, {1});
  EXPECT_THROW(focal_contrastive_loss(v, v, Temperature::fixed(1), -1), ContractError);
}

TEST(TemperatureGradient, MatchesFiniteDifferences) {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor v = unit_rows(4, 6, rng), l = unit_rows(4, 6, rng);
    Temperature tau{Tensor::full({1}, std::log(0.3 + 0.2 * trial), true)};
    EXPECT_LT(finite_diff_check([&] { return focal_contrastive_loss(v, l, tau, 2.0); }, {tau.log_tau}, 1e-6), 1e-4);
    EXPECT_LT(finite_diff_check([&] { return contrastive_loss(v, l, tau); }, {tau.log_tau}, 1e-6), 1e-4);
  }
}

TEST(TotalLoss, WeightedSum) {
  Tensor cap = Tensor::scalar(3.0), con = Tensor::scalar(5.0);
  EXPECT_NEAR(total_loss(cap, con, LossWeights{}).item(), 8.0, 1e-6);
  EXPECT_NEAR(total_loss(cap, con, LossWeights{0.5, 2.0, 2.0}).item(), 11.5, 1e-6);
}

TEST(TotalLoss, ZeroCaptionWeightBlocksGradient) {
  Tensor gen_only = Tensor::full({3}, 0.7, true);
  Tensor shared = Tensor::full({3}, 0.2, true);
  Tensor cap = sum(mul(gen_only, shared));
  Tensor con = sum(exp(shared));
  backward(total_loss(cap, con, LossWeights{0.0, 1.0, 2.0}));
  for (double g : gen_only.grad_vector()) EXPECT_EQ(g, 0.0);
}

}  // namespace
}  // namespace mammut
