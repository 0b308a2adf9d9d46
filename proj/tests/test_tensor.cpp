#include "duomodal/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "duomodal/errors.hpp"
#include "duomodal/rng.hpp"
#include "fd_suite.hpp"

using namespace duomodal;

TEST(Matmul, IdentityTimesAnyIsIdentityCase) {
  auto I = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  auto A = Tensor::from_vector({2, 2}, {3.f, -1.f, 2.5f, 7.f});
  auto C = matmul(I, A);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(C.data()[i], A.data()[i]);
}

TEST(Matmul, HandComputedProduct) {
  auto A = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  auto B = Tensor::from_vector({2, 1}, {1, 1});
  auto C = matmul(A, B);
  EXPECT_FLOAT_EQ(C.data()[0], 3.f);
  EXPECT_FLOAT_EQ(C.data()[1], 7.f);
}

TEST(Matmul, ZerosTimesAnythingIsZeros) {
  auto Z = Tensor::zeros({3, 4});
  auto B = Tensor::filled({4, 2}, 2.5f);
  auto C = matmul(Z, B);
  EXPECT_EQ(C.shape(), (Shape{3, 2}));
  for (std::size_t i = 0; i < C.numel(); ++i) EXPECT_FLOAT_EQ(C.data()[i], 0.f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto A = Tensor::zeros({2, 3});
  auto B = Tensor::zeros({4, 2});
  try {
    matmul(A, B);
    FAIL() << "expected shape error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Matmul, AssociativityOnRandomInstances) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    auto rand_mat = [&](std::size_t m, std::size_t n) {
      std::vector<float> v(m * n);
      for (auto& x : v) x = static_cast<float>(-1.0 + 2.0 * rng.uniform01());
      return Tensor::from_vector({m, n}, std::move(v));
    };
    auto A = rand_mat(3, 4), B = rand_mat(4, 5), C = rand_mat(5, 2);
    auto left = matmul(matmul(A, B), C);
    auto right = matmul(A, matmul(B, C));
    for (std::size_t i = 0; i < left.numel(); ++i)
      EXPECT_NEAR(left.data()[i], right.data()[i], 1e-5);
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  auto y = softmax_rows(Tensor::from_vector({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 1.f / 3.f, 1e-7);
}

TEST(Softmax, StableUnderLargeConstantShift) {
  auto y = softmax_rows(Tensor::from_vector({2}, {1000.f, 1000.f}));
  EXPECT_FLOAT_EQ(y.data()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.data()[1], 0.5f);
}

TEST(Softmax, HandComputedLogThree) {
  auto y = softmax_rows(
      Tensor::from_vector({2}, {0.f, std::log(3.f)}));
  EXPECT_NEAR(y.data()[0], 0.25f, 1e-6);
  EXPECT_NEAR(y.data()[1], 0.75f, 1e-6);
}

TEST(Softmax, RowsSumToOneForRandomInput) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> v(4 * 7);
    for (auto& x : v) x = static_cast<float>(-40.0 + 80.0 * rng.uniform01());
    auto y = softmax_rows(Tensor::from_vector({4, 7}, std::move(v)));
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += y.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, Axis0MatchesTransposedRows) {
  auto x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto a = softmax(x, 0);
  auto b = transpose(softmax_rows(transpose(x)));
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_FLOAT_EQ(a.data()[i], b.data()[i]);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  auto x = Tensor::filled({2, 4}, 3.25f);
  auto g = Tensor::filled({4}, 1.f);
  auto b = Tensor::zeros({4});
  auto y = layer_norm(x, g, b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], 0.f, 1e-5);
}

TEST(LayerNorm, TwoPointRowNormalizesToUnit) {
  auto x = Tensor::from_vector({1, 2}, {1, 3});
  auto g = Tensor::filled({2}, 1.f);
  auto b = Tensor::zeros({2});
  auto y = layer_norm(x, g, b, 1e-12f);
  EXPECT_NEAR(y.data()[0], -1.f, 1e-4);
  EXPECT_NEAR(y.data()[1], 1.f, 1e-4);
}

TEST(LayerNorm, ZeroGainBroadcastsBias) {
  auto x = Tensor::from_vector({2, 3}, {5, -2, 0.5, 9, 1, -4});
  auto g = Tensor::zeros({3});
  auto b = Tensor::from_vector({3}, {0.1f, 0.2f, 0.3f});
  auto y = layer_norm(x, g, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_FLOAT_EQ(y.at(i, j), b.data()[j]);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  auto logits = Tensor::from_vector({2, 3}, {30, 0, 0, 0, 30, 0});
  auto loss = cross_entropy(logits, {0, 1});
  EXPECT_NEAR(loss.item(), 0.f, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  auto logits = Tensor::filled({4, 8}, 0.7f);
  auto loss = cross_entropy(logits, {0, 3, 5, 7});
  EXPECT_NEAR(loss.item(), std::log(8.f), 1e-6);
}

TEST(CrossEntropy, MaskSelectsSinglePositionNll) {
  auto logits = Tensor::from_vector({3, 2}, {1.f, -1.f, 0.5f, 2.f, -3.f, 0.f});
  // NLL of position 1, target 0: log(exp(0.5)+exp(2)) - 0.5
  const double expected =
      std::log(std::exp(0.5) + std::exp(2.0)) - 0.5;
  auto loss = cross_entropy(logits, {1, 0, 1}, {0, 1, 0});
  EXPECT_NEAR(loss.item(), expected, 1e-6);
}

TEST(CrossEntropy, NonNegativeOnRandomInput) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    std::vector<float> v(3 * 5);
    for (auto& x : v) x = static_cast<float>(-4.0 + 8.0 * rng.uniform01());
    std::vector<std::int64_t> tgt{1, 0, 4};
    auto loss = cross_entropy(Tensor::from_vector({3, 5}, std::move(v)), tgt);
    EXPECT_GE(loss.item(), 0.f);
  }
}

TEST(CrossEntropy, TargetOutOfRangeThrows) {
  auto logits = Tensor::zeros({2, 3});
  EXPECT_THROW(cross_entropy(logits, {0, 3}), Error);
}

TEST(CrossEntropy, EmptyEffectiveMaskThrows) {
  auto logits = Tensor::zeros({2, 3});
  EXPECT_THROW(cross_entropy(logits, {0, 1}, {0, 0}), Error);
}

TEST(L1Loss, IdenticalInputsGiveZero) {
  auto a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  EXPECT_FLOAT_EQ(l1_loss(a, b).item(), 0.f);
}

TEST(L1Loss, ConstantOffset) {
  auto a = Tensor::filled({3, 4}, 1.f);
  auto b = Tensor::filled({3, 4}, 1.5f);
  EXPECT_FLOAT_EQ(l1_loss(a, b).item(), 0.5f);
}

TEST(L1Loss, HandComputedRow) {
  auto pred = Tensor::from_vector({1, 2}, {1, 2});
  auto target = Tensor::from_vector({1, 2}, {0, 4});
  EXPECT_FLOAT_EQ(l1_loss(pred, target).item(), 1.5f);
}

TEST(L1Loss, ShapeMismatchThrows) {
  EXPECT_THROW(l1_loss(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), Error);
}

TEST(L1Loss, EmptyEffectiveMaskThrows) {
  EXPECT_THROW(
      l1_loss(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), {0, 0}), Error);
}

TEST(Backward, SumGradIsOnes) {
  auto x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  sum(x).backward();
  for (auto g : x.grad()) EXPECT_FLOAT_EQ(g, 1.f);
}

TEST(Backward, SumOfSquaresGrad) {
  auto x = Tensor::from_vector({2}, {2, -3}, true);
  sum(mul(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 4.f);
  EXPECT_FLOAT_EQ(x.grad()[1], -6.f);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Tensor::from_vector({2}, {1, 2}, true);
  EXPECT_THROW(x.backward(), Error);
}

TEST(Backward, SharedLeafAccumulatesBothUses) {
  // one tensor used twice (weight-tying pattern): grads accumulate
  auto x = Tensor::from_vector({2, 2}, {1, 2, 3, 4}, true);
  auto y = add(mul(x, x), x);
  sum(y).backward();
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_FLOAT_EQ(x.grad()[i], 2.f * x.data()[i] + 1.f);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::from_vector({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard ng;
    y = sum(mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
  y.backward();  // no graph recorded, so nothing reaches x
  for (auto g : x.grad()) EXPECT_FLOAT_EQ(g, 0.f);
}

TEST(FiniteDifference, AllOpsMatchCentralDifferences) {
  auto reports = fd_suite::run(20, 20260810);
  for (const auto& r : reports) {
    EXPECT_GE(r.instances, 20u) << r.name;
    EXPECT_LT(r.max_rel_err, 1e-3) << "op " << r.name;
  }
}

TEST(Tensor, FromVectorShapeMismatchThrows) {
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), Error);
}

TEST(Tensor, FiniteAfterForwardChain) {
  Rng rng(5);
  std::vector<float> v(8 * 8);
  for (auto& x : v) x = static_cast<float>(-1.0 + 2.0 * rng.uniform01());
  auto x = Tensor::from_vector({8, 8}, std::move(v));
  auto g = Tensor::filled({8}, 1.f);
  auto b = Tensor::zeros({8});
  auto y = softmax_rows(layer_norm(gelu(matmul(x, x)), g, b));
  EXPECT_TRUE(all_finite(y));
}
