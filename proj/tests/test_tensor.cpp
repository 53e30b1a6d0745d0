#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ktm/errors.hpp"
#include "ktm/ops.hpp"
#include "ktm/optim.hpp"
#include "ktm/tensor.hpp"

using namespace ktm;
using ktm::testing::check_gradients;
using ktm::testing::random_tensor;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << "at " << i;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

}  // namespace

TEST(Tensor, ShapeAndGradInvariants) {
  auto t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.grad().size(), t.numel());
  auto u = Tensor::zeros({2, 3});
  EXPECT_FALSE(u.requires_grad());
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, BackwardLeavesDataUnchanged) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const std::vector<double> a0(a.data().begin(), a.data().end());
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < a0.size(); ++i) EXPECT_EQ(a.data()[i], a0[i]);
}

TEST(Tensor, ReusedNodeSumsPaths) {
  // f = x*x + 3x, df/dx = 2x + 3.
  auto x = Tensor::from({1}, {2.0}, true);
  auto f = add(mul(x, x), scale(x, 3.0));
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, NoGradGuardSkipsTape) {
  auto x = Tensor::from({1}, {2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(y.backward(), UsageError);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(eye, m), {1, 2, 3, 4});
  expect_values(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})), {11});
}

TEST(Matmul, ShapeMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({4, 5}, rng);
    auto b = random_tensor({5, 3}, rng);
    auto r = check_gradients([&] { return matmul(a, b); }, {a, b}, seed);
    EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
  }
}

TEST(Softmax, Examples) {
  expect_values(softmax(Tensor::from({3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_values(softmax(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)})),
                {1.0 / 6, 2.0 / 6, 3.0 / 6});
}

TEST(Softmax, ShiftInvariantAndStable) {
  auto a = softmax(Tensor::from({3}, {1, 2, 3}));
  auto b = softmax(Tensor::from({3}, {1001, 1002, 1003}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({6, 7}, rng, -20, 20, false);
  auto y = softmax(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  auto y = masked_softmax(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), std::vector<std::uint8_t>{1, 0, 1, 0, 0, 0});
  EXPECT_EQ(y.data()[1], 0.0);
  EXPECT_NEAR(y.data()[0] + y.data()[2], 1.0, 1e-12);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({3, 5}, rng, -2, 2);
    auto r = check_gradients([&] { return softmax(x); }, {x}, seed);
    EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
    std::vector<std::uint8_t> allowed(15, 1);
    allowed[2] = allowed[7] = allowed[8] = 0;
    auto rm = check_gradients([&] { return masked_softmax(x, allowed); }, {x}, seed);
    EXPECT_LT(rm.max_rel_err, 1e-4) << rm.worst;
  }
}

TEST(LayerNorm, Examples) {
  auto gain = Tensor::full({2}, 1.0), bias = Tensor::zeros({2});
  expect_values(layer_norm(Tensor::from({1, 2}, {5, 5}), gain, bias), {0, 0});
  // Population variance of [1,3] is 1, so the row standardises to [-1, 1] up to eps.
  auto y = layer_norm(Tensor::from({1, 2}, {1, 3}), gain, bias);
  const double s = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  expect_values(y, {-s, s});
  EXPECT_NEAR(y.data()[1], 1.0, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({4, 6}, rng, -2, 2);
    auto g = random_tensor({6}, rng, 0.5, 1.5);
    auto b = random_tensor({6}, rng);
    auto r = check_gradients([&] { return layer_norm(x, g, b); }, {x, g, b}, seed);
    EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
  }
}

TEST(Activation, LeakyRelu) { expect_values(leaky_relu(Tensor::from({2}, {-1, 2})), {-0.01, 2}); }

TEST(Activation, SigmoidRangeAndSymmetry) {
  auto y = sigmoid(Tensor::from({3}, {-800, 0, 800}));
  EXPECT_GE(y.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
  EXPECT_LE(y.data()[2], 1.0);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({5, 4}, rng, -3, 3);
    // Keep away from the kink so central differences are valid.
    for (auto& v : x.mutable_data()) {
      if (std::abs(v) < 1e-2) v = 0.5;
    }
    EXPECT_LT(check_gradients([&] { return leaky_relu(x); }, {x}, seed).max_rel_err, 1e-4);
    EXPECT_LT(check_gradients([&] { return sigmoid(x); }, {x}, seed).max_rel_err, 1e-4);
  }
}

TEST(Dropout, IdentityCases) {
  std::mt19937_64 rng(1);
  auto x = Tensor::from({4}, {1, 2, 3, 4});
  expect_values(dropout(x, 0.0, true, rng), {1, 2, 3, 4});
  expect_values(dropout(x, 0.5, false, rng), {1, 2, 3, 4});
}

TEST(Dropout, KeepRateAndScaling) {
  std::mt19937_64 rng(11);
  const double p = 0.3;
  auto y = dropout(Tensor::full({100000}, 1.0), p, true, rng);
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      ++kept;
      EXPECT_NEAR(v, 1.0 / (1.0 - p), 1e-12);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e5, 1.0 - p, 0.01);
}

TEST(Dropout, RejectsBadProbability) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(dropout(Tensor::zeros({2}), 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(Tensor::zeros({2}), -0.1, true, rng), ConfigError);
}

TEST(Dropout, GradientUsesSameMask) {
  std::mt19937_64 rng(5);
  auto x = Tensor::full({50}, 2.0, true);
  auto y = dropout(x, 0.5, true, rng);
  sum(y).backward();
  for (std::size_t i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], y.data()[i] / 2.0);
}

TEST(Ops, StructuralGradientsMatchFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    auto w = random_tensor({4, 2}, rng);
    auto s = random_tensor({3}, rng);
    auto table = random_tensor({5, 4}, rng);
    const std::vector<std::size_t> rows{4, 0, 4, 2};
    auto check = [&](auto f, std::vector<Tensor> ps) {
      auto r = check_gradients(f, ps, seed);
      EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
    };
    check([&] { return add(a, b); }, {a, b});
    check([&] { return sub(a, b); }, {a, b});
    check([&] { return mul(a, b); }, {a, b});
    check([&] { return scale(a, -1.7); }, {a});
    check([&] { return sum(a); }, {a});
    check([&] { return mean(a); }, {a});
    check([&] { return reshape(a, {4, 3}); }, {a});
    check([&] { return add_bias(a, bias); }, {a, bias});
    check([&] { return linear(a, w, Tensor::from({2}, {0.1, -0.2}, true)); }, {a, w});
    check([&] { return row_scale(a, s); }, {a, s});
    check([&] { return index_rows(table, rows); }, {table});
    check([&] { return concat_cols(a, b); }, {a, b});
    check([&] { return slice_cols(a, 1, 2); }, {a});
  }
}

TEST(Ops, BatchedAndHeadGradientsMatchFiniteDifferences) {
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 4, 5}, rng);
    auto c = random_tensor({2, 5, 4}, rng);
    EXPECT_LT(check_gradients([&] { return bmm(a, b); }, {a, b}, seed).max_rel_err, 1e-4);
    EXPECT_LT(check_gradients([&] { return bmm_nt(a, c); }, {a, c}, seed).max_rel_err, 1e-4);
    auto x = random_tensor({6, 8}, rng);  // batch 2, len 3
    EXPECT_LT(check_gradients([&] { return split_heads(x, 2, 3, 2, 3, 1); }, {x}, seed).max_rel_err, 1e-4);
    auto h = random_tensor({4, 3, 2}, rng);
    EXPECT_LT(check_gradients([&] { return merge_heads(h, 2, 2); }, {h}, seed).max_rel_err, 1e-4);
  }
}

TEST(Ops, SplitMergeRoundTrip) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({6, 8}, rng, -1, 1, false);
  auto y = merge_heads(split_heads(x, 2, 3, 4, 2), 2, 4);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.data()[i], y.data()[i]);
}

TEST(Ops, IndexRowsOutOfRange) {
  EXPECT_THROW(index_rows(Tensor::zeros({3, 2}), std::vector<std::size_t>{3}), std::out_of_range);
}

TEST(Bce, ValuesAndGradient) {
  auto half = Tensor::full({4}, 0.5);
  EXPECT_NEAR(binary_cross_entropy(half, std::vector<double>{0, 1, 1, 0}).item(), std::log(2.0), 1e-12);
  auto exact = Tensor::from({2}, {1.0, 0.0});
  EXPECT_LT(binary_cross_entropy(exact, std::vector<double>{1, 0}).item(), 1e-11);
  for (auto seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto p = random_tensor({6}, rng, 0.05, 0.95);
    const std::vector<double> y{1, 0, 0, 1, 1, 0};
    EXPECT_LT(check_gradients([&] { return binary_cross_entropy(p, y); }, {p}, seed).max_rel_err, 1e-4);
  }
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto w = Tensor::from({2}, {0.3, -0.4}, true);
  Adam opt({w});
  opt.step();
  EXPECT_DOUBLE_EQ(w.data()[0], 0.3);
  EXPECT_DOUBLE_EQ(w.data()[1], -0.4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor::from({1}, {1.0}, true);
  Adam opt({w});
  w.mutable_grad()[0] = 1.0;
  opt.step();
  EXPECT_NEAR(w.data()[0], 1.0 - 0.001, 1e-8);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MinimisesQuadratic) {
  auto w = Tensor::from({1}, {1.0}, true);
  AdamOptions o;
  o.lr = 0.1;
  Adam opt({w}, o);
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    auto f = mul(w, w);
    f.backward();
    opt.step();
    opt.zero_grad();
    const double now = w.data()[0] * w.data()[0];
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Adam, RejectsParameterWithoutGradient) {
  EXPECT_THROW(Adam({Tensor::zeros({2})}), UsageError);
}
