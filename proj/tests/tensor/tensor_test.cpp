#include <gtest/gtest.h>

#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"
#include "mammut/tensor/tensor.hpp"

namespace mammut {
namespace {

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.buffer().size(), 24u);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
}

TEST(Tensor, PrecisionScopeControlsStorage) {
  EXPECT_EQ(Tensor::zeros({1}).precision(), Precision::f32);
  {
    PrecisionScope scope(Precision::f64);
    EXPECT_EQ(Tensor::zeros({1}).precision(), Precision::f64);
  }
  EXPECT_EQ(Tensor::zeros({1}).precision(), Precision::f32);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({3}, {0.5, -2.0, 7.0}, true);
  backward(sum(x));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, DotProductWithItself) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarRoot) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x = Tensor::from({2}, {1.0, 3.0}, true);
  Tensor shared = mul(x, x);
  backward(sum(shared));
  backward(sum(scale(shared, 2.0)));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{6, 18}));
}

TEST(Backward, SharedSubgraphIsVisitedOnce) {
  PrecisionScope f64(Precision::f64);
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = mul(x, x);
  Tensor z = add(y, y);  // 2x^2
  backward(sum(z));
  EXPECT_DOUBLE_EQ(x.grad_vector()[0], 12.0);
}

TEST(Backward, NoGradGuardDetachesTape) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(backward(y), ContractError);
}

TEST(Backward, ReachableLeavesOnlyListsTrainable) {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor b = Tensor::from({2}, {1.0, 2.0}, false);
  Tensor c = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor out = sum(mul(a, b));
  auto leaves = reachable_leaves(out);
  ASSERT_EQ(leaves.size(), 1u);
  EXPECT_EQ(leaves[0], a.id());
  (void)c;
}

}  // namespace
}  // namespace mammut
