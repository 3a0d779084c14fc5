#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nflat/ops.hpp"
#include "nflat/optim.hpp"
#include "nflat/params.hpp"
#include "oracles.hpp"

using namespace nflat;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, IdentityLeavesMatrix) {
  auto a = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.data()[0], 11.0);
}

TEST(Matmul, GradOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 gen(1);
  auto a = oracle::random_tensor({3, 4}, gen);
  auto b = oracle::random_tensor({4, 2}, gen, false);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_NEAR(a.grad()[i * 4 + k], b.data()[k * 2] + b.data()[k * 2 + 1], 1e-12);
  auto fresh = oracle::random_tensor({4, 2}, gen);
  EXPECT_LT(oracle::grad_check([&] { return sum(matmul(a, fresh)); }, {a, fresh}), kGradTol);
}

TEST(Matmul, BatchedAndBroadcastAgreeWithLoops) {
  std::mt19937_64 gen(2);
  auto a = oracle::random_tensor({2, 3, 4}, gen);
  auto w = oracle::random_tensor({4, 5}, gen);
  auto y = matmul(a, w);
  auto ref = oracle::matmul_loop(values(a), values(w), 6, 4, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  auto b = oracle::random_tensor({2, 4, 3}, gen);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(matmul(a, w)); }, {a, w}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(matmul(a, b)); }, {a, b}), kGradTol);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Softmax, UniformOnEqualScores) {
  auto s = softmax_lastdim(Tensor::from({3}, {0, 0, 0}));
  for (double x : s.data()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeScoresDoNotOverflow) {
  auto s = softmax_lastdim(Tensor::from({2}, {1e3, 0}));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(s.data()[1]));
}

TEST(Softmax, RandomRowSumsToOneAndGradChecks) {
  std::mt19937_64 gen(3);
  auto x = oracle::random_tensor({5}, gen);
  auto s = softmax_lastdim(x);
  EXPECT_NEAR(std::accumulate(s.data().begin(), s.data().end(), 0.0), 1.0, 1e-9);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(softmax_lastdim(x)); }, {x}), kGradTol);
}

TEST(LayerNorm, ConstantSliceMapsToZero) {
  auto y = layer_norm(Tensor::from({3}, {1, 1, 1}), Tensor::from({3}, {1, 1, 1}), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedInputUnchanged) {
  auto y = layer_norm(Tensor::from({2}, {-1, 1}), Tensor::from({2}, {1, 1}), Tensor::zeros({2}));
  EXPECT_NEAR(y.data()[0], -1.0, 1e-10);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-10);
}

TEST(LayerNorm, MatchesLoopAndGradChecks) {
  std::mt19937_64 gen(4);
  auto x = oracle::random_tensor({2, 4}, gen);
  auto g = oracle::random_tensor({4}, gen);
  auto b = oracle::random_tensor({4}, gen);
  auto y = layer_norm(x, g, b);
  auto ref = oracle::layer_norm_loop(values(x), values(g), values(b), 4);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(layer_norm(x, g, b)); }, {x, g, b}), kGradTol);
}

TEST(Elementwise, ReluClampsNegatives) {
  EXPECT_EQ(values(relu(Tensor::from({3}, {-2, 0, 3}))), (std::vector<double>{0, 0, 3}));
}

TEST(Elementwise, ConcatLastDim) {
  EXPECT_EQ(values(concat_lastdim(Tensor::from({2}, {1, 2}), Tensor::from({1}, {3}))), (std::vector<double>{1, 2, 3}));
}

TEST(Elementwise, DropoutZeroRateIsIdentity) {
  Rng rng(5);
  auto x = Tensor::from({4}, {1, -2, 3, 4});
  EXPECT_EQ(values(dropout(x, 0.0, true, rng)), values(x));
}

TEST(Elementwise, DropoutKeepsExpectation) {
  Rng rng(6);
  auto x = Tensor::from({20000}, std::vector<double>(20000, 1.0));
  auto y = dropout(x, 0.3, true, rng);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 20000.0;
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_THROW(dropout(x, 1.0, true, rng), ContractError);
}

TEST(Elementwise, GradChecks) {
  std::mt19937_64 gen(7);
  auto a = oracle::random_tensor({2, 3}, gen);
  auto b = oracle::random_tensor({2, 3}, gen);
  auto bias = oracle::random_tensor({3}, gen);
  auto c = oracle::random_tensor({2, 2}, gen);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(add(a, b)); }, {a, b}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(add(a, bias)); }, {a, bias}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(mul(a, b)); }, {a, b}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(scale(a, -2.5)); }, {a}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(relu(a)); }, {a}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(reshape(a, {3, 2})); }, {a}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(concat_lastdim(a, c)); }, {a, c}), kGradTol);
  auto fixed_dropout = [&] {
    Rng r(8);
    return oracle::probe(dropout(a, 0.4, true, r));
  };
  EXPECT_LT(oracle::grad_check(fixed_dropout, {a}), kGradTol);
}

TEST(Sequence, ConcatAndSliceRoundTrip) {
  std::mt19937_64 gen(9);
  auto a = oracle::random_tensor({2, 3, 4}, gen);
  auto b = oracle::random_tensor({2, 2, 4}, gen);
  auto c = concat_seq(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 5, 4}));
  EXPECT_EQ(values(slice_seq(c, 0, 3)), values(a));
  EXPECT_EQ(values(slice_seq(c, 3, 2)), values(b));
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(concat_seq(a, b)); }, {a, b}), kGradTol);
  EXPECT_LT(oracle::grad_check([&] { return oracle::probe(slice_seq(concat_seq(a, b), 1, 3)); }, {a, b}), kGradTol);
  EXPECT_THROW(slice_seq(c, 4, 2), ShapeError);
}

TEST(Embedding, LookupGathersAndScattersRows) {
  auto table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<int> ids{2, 0, 2};
  auto y = embedding_lookup(table, ids);
  EXPECT_EQ(values(y), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  sum(y).backward();
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()), (std::vector<double>{1, 1, 0, 0, 2, 2}));
  const std::vector<int> bad{3};
  EXPECT_THROW(embedding_lookup(table, bad), LookupError);
}

TEST(Autograd, NoGradDropsGraph) {
  auto a = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = mul(a, a);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  auto a = Tensor::from({1}, {3}, true);
  auto y = sum(add(mul(a, a), a));
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Optimizer, ScheduleWarmsUpThenDecays) {
  WarmupLinearSchedule s{1.0, 100, 0.1};
  EXPECT_DOUBLE_EQ(s.at(5), 0.5);
  EXPECT_DOUBLE_EQ(s.at(10), 1.0);
  EXPECT_DOUBLE_EQ(s.at(55), 0.5);
  EXPECT_DOUBLE_EQ(s.at(100), 0.0);
}

TEST(Optimizer, AdamMinimizesQuadratic) {
  ParamStore store;
  Rng rng(10);
  auto x = store.add("x", {3}, Init::Normal, rng, 1.0);
  Adam opt(store);
  for (int step = 0; step < 2000; ++step) {
    store.zero_grad();
    auto target = Tensor::from({3}, {1, -2, 0.5});
    auto diff = add(x, scale(target, -1.0));
    sum(mul(diff, diff)).backward();
    opt.step(0.01);
  }
  EXPECT_NEAR(x.data()[0], 1.0, 1e-3);
  EXPECT_NEAR(x.data()[1], -2.0, 1e-3);
  EXPECT_NEAR(x.data()[2], 0.5, 1e-3);
}
