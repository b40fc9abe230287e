#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"
#include "mammut/tensor/parallel.hpp"

namespace mammut {
namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

TEST(Matmul, IdentityLeavesInputUnchanged) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(matmul(a, eye).to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ScalarProduct) {
  EXPECT_EQ(matmul(Tensor::from({1, 1}, {2}), Tensor::from({1, 1}, {3})).item(), 6.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto av = random_values(9, rng);
    auto bv = random_values(9, rng);
    Tensor c = matmul(Tensor::from({3, 3}, av), Tensor::from({3, 3}, bv));
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double ref = 0;
        for (int k = 0; k < 3; ++k) ref += av[i * 3 + k] * bv[k * 3 + j];
        EXPECT_NEAR(c.at(i * 3 + j), ref, 1e-6 * std::max(1.0, std::abs(ref)));
      }
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3] x [2,3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, ThreadedKernelMatchesInline) {
  std::mt19937_64 rng(3);
  Tensor a = Tensor::from({300, 17}, random_values(300 * 17, rng));
  Tensor b = Tensor::from({17, 9}, random_values(17 * 9, rng));
  auto inline_result = matmul(a, b).to_vector();
  set_kernel_threads(4);
  auto threaded = matmul(a, b).to_vector();
  set_kernel_threads(0);
  for (std::size_t i = 0; i < inline_result.size(); ++i) {
    EXPECT_NEAR(inline_result[i], threaded[i], 1e-6);
  }
}

TEST(MaskedSoftmax, EqualLogitsAreUniform) {
  Tensor p = masked_softmax(Tensor::from({4}, {0.3, 0.3, 0.3, 0.3}), Mask({4}, true));
  for (double v : p.to_vector()) EXPECT_NEAR(v, 0.25, 1e-7);
}

TEST(MaskedSoftmax, LogTwoGivesThirds) {
  PrecisionScope f64(Precision::f64);
  Tensor p = masked_softmax(Tensor::from({2}, {0.0, std::log(2.0)}), Mask({2}, true));
  EXPECT_NEAR(p.at(0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(p.at(1), 2.0 / 3.0, 1e-12);
}

TEST(MaskedSoftmax, MaskedEntryIsExactlyZero) {
  PrecisionScope f64(Precision::f64);
  Mask mask({3}, true);
  mask.allowed[1] = 0;
  Tensor p = masked_softmax(Tensor::from({3}, {5, 9, 1}), mask);
  EXPECT_EQ(p.at(1), 0.0);
  // Two-element softmax over the surviving logits 5 and 1.
  const double e5 = std::exp(5.0), e1 = std::exp(1.0);
  EXPECT_NEAR(p.at(0), e5 / (e5 + e1), 1e-12);
  EXPECT_NEAR(p.at(2), e1 / (e5 + e1), 1e-12);
}

TEST(MaskedSoftmax, FullyMaskedRowIsRejected) {
  Mask mask({2, 2}, true);
  mask.allowed[2] = mask.allowed[3] = 0;
  EXPECT_THROW(masked_softmax(Tensor::zeros({2, 2}), mask), InvalidMaskError);
}

TEST(MaskedSoftmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng() % 4, n = 1 + rng() % 7;
    Mask mask({rows, n}, true);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t keep = rng() % n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != keep && rng() % 2) mask.allowed[r * n + j] = 0;
      }
    }
    Tensor p = masked_softmax(Tensor::from({2, rows, n}, random_values(2 * rows * n, rng, -20, 20)), mask);
    for (std::size_t r = 0; r < 2 * rows; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = p.at(r * n + j);
        if (!mask.at((r % rows) * n + j)) EXPECT_EQ(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tensor y = layer_norm(Tensor::full({1, 5}, 3.0), Tensor::full({5}, 1.0), Tensor::zeros({5}), 1e-5);
  for (double v : y.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixedPoint) {
  PrecisionScope f64(Precision::f64);
  Tensor y = layer_norm(Tensor::from({1, 2}, {-1, 1}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y.at(0), -1.0, 1e-9);
  EXPECT_NEAR(y.at(1), 1.0, 1e-9);
}

TEST(LayerNorm, MatchesScalarLoopOracle) {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(9);
  const std::size_t d = 7;
  auto xv = random_values(3 * d, rng, -4, 4);
  auto gv = random_values(d, rng);
  auto bv = random_values(d, rng);
  Tensor y = layer_norm(Tensor::from({3, d}, xv), Tensor::from({d}, gv), Tensor::from({d}, bv), 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j] / d;
    for (std::size_t j = 0; j < d; ++j) var += (xv[r * d + j] - mu) * (xv[r * d + j] - mu) / d;
    for (std::size_t j = 0; j < d; ++j) {
      const double ref = (xv[r * d + j] - mu) / std::sqrt(var + 1e-5) * gv[j] + bv[j];
      EXPECT_NEAR(y.at(r * d + j), ref, 1e-6);
    }
  }
}

TEST(L2Normalize, UnitNormProperty) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng() % 5, d = 1 + rng() % 9;
    Tensor y = l2_normalize(Tensor::from({rows, d}, random_values(rows * d, rng, -50, 50)));
    for (std::size_t r = 0; r < rows; ++r) {
      double ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += y.at(r * d + j) * y.at(r * d + j);
      EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
    }
  }
}

TEST(Broadcast, TrailingSuffixAndScalarOnly) {
  Tensor a = Tensor::zeros({2, 3});
  EXPECT_NO_THROW(add(a, Tensor::zeros({3})));
  EXPECT_NO_THROW(mul(a, Tensor::zeros({1})));
  EXPECT_THROW(add(a, Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST(Permute, RoundTripsThroughInverse) {
  std::mt19937_64 rng(2);
  auto v = random_values(2 * 3 * 4 * 5, rng);
  Tensor x = Tensor::from({2, 3, 4, 5}, v);
  Tensor y = permute(x, {2, 0, 3, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 2, 5, 3}));
  // inverse of {2,0,3,1} is {1,3,0,2}
  EXPECT_EQ(permute(y, {1, 3, 0, 2}).to_vector(), x.to_vector());
  // Spot-check one element: y[i,j,k,l] = x[j,l,i,k]
  EXPECT_EQ(y.at(((3 * 2 + 1) * 5 + 4) * 3 + 2), x.at(((1 * 3 + 2) * 4 + 3) * 5 + 4));
}

TEST(Concat, AlongTokenAxis) {
  Tensor a = Tensor::from({1, 1, 2}, {1, 2});
  Tensor b = Tensor::from({1, 2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(concat({a, b}, 1).to_vector(), (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(Reductions, AxisSumAndMean) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sum(x, 0).to_vector(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(mean(x, 1).to_vector(), (std::vector<double>{2, 5}));
  EXPECT_EQ(sum(x).item(), 21.0);
}

TEST(Embedding, LookupAndScatterAdd) {
  Tensor table = Tensor::from({3, 2}, {0, 1, 2, 3, 4, 5}, true);
  std::vector<std::int32_t> ids{2, 0, 2};
  Tensor e = embedding(table, ids, {3});
  EXPECT_EQ(e.to_vector(), (std::vector<double>{4, 5, 0, 1, 4, 5}));
  backward(sum(e));
  EXPECT_EQ(table.grad_vector(), (std::vector<double>{1, 1, 0, 0, 2, 2}));
  std::vector<std::int32_t> bad{3};
  EXPECT_THROW(embedding(table, bad, {1}), DimensionError);
}

TEST(BilinearResize, LinearRampIsReproduced) {
  PrecisionScope f64(Precision::f64);
  // f(y, x) = 2y + 3x on a 3x4 grid; corner-aligned resize samples the ramp exactly.
  std::vector<double> v;
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) v.push_back(2 * y + 3 * x);
  }
  Tensor out = bilinear_resize(Tensor::from({3, 4, 1}, v), 5, 7);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 7; ++j) {
      const double y = i * 2.0 / 4.0, x = j * 3.0 / 6.0;
      EXPECT_NEAR(out.at(i * 7 + j), 2 * y + 3 * x, 1e-12);
    }
  }
}

TEST(BilinearSample, ClampsOutsideGrid) {
  Tensor g = Tensor::from({1, 2, 1}, {1, 3});
  std::vector<std::pair<double, double>> pts{{0, -5}, {0, 0.5}, {0, 9}};
  EXPECT_EQ(bilinear_sample(g, pts).to_vector(), (std::vector<double>{1, 2, 3}));
}

TEST(LogSigmoid, StableAtExtremes) {
  PrecisionScope f64(Precision::f64);
  Tensor y = log_sigmoid(Tensor::from({3}, {-800, 0, 800}));
  EXPECT_NEAR(y.at(0), -800.0, 1e-9);
  EXPECT_NEAR(y.at(1), -std::log(2.0), 1e-12);
  EXPECT_NEAR(y.at(2), 0.0, 1e-12);
}

}  // namespace
}  // namespace mammut
