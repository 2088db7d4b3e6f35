/*
 * Copyright DRNet Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <cmath>

#include <gtest/gtest.h>

#include "drnet/autodiff.hpp"
#include "drnet/error.hpp"
#include "drnet/gradcheck.hpp"
#include "drnet/ops.hpp"
#include "drnet/optim.hpp"
#include "test_support.hpp"

namespace drnet {
namespace {

using testing::max_abs_diff;
using testing::naive_conv2d;
using testing::random_tensor;

TEST(Conv2d, IdentityKernelReturnsInput) {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Variable y = conv2d(Variable(x), Variable(Tensor({1, 1, 1, 1}, {1.0})), std::nullopt, 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  Rng rng = make_rng(1);
  const Variable y =
      conv2d(Variable(Tensor({2, 3, 5, 5}, 0.0)), Variable(random_tensor({4, 3, 3, 3}, rng)), std::nullopt, 1, 1);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng = make_rng(2);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Variable y = conv2d(Variable(x), Variable(w), std::nullopt, 2, 1);
  const Tensor ref = naive_conv2d(x, w, nullptr, 2, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12);
}

TEST(Conv2d, MatchesLoopOracleWithBiasAtEightByEight) {
  Rng rng = make_rng(3);
  const Tensor x = random_tensor({2, 4, 8, 8}, rng);
  const Tensor w = random_tensor({4, 4, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  for (int stride : {1, 2}) {
    const Variable y = conv2d(Variable(x), Variable(w), Variable(b), stride, 1);
    EXPECT_LT(max_abs_diff(y.value(), naive_conv2d(x, w, &b, stride, 1)), 1e-12) << "stride " << stride;
  }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Variable(Tensor({1, 2, 4, 4})), Variable(Tensor({1, 3, 3, 3})), std::nullopt, 1, 0),
               DimensionError);
}

TEST(Conv2d, KernelLargerThanInputIsConfigError) {
  EXPECT_THROW(conv2d(Variable(Tensor({1, 1, 2, 2})), Variable(Tensor({1, 1, 3, 3})), std::nullopt, 1, 0), ConfigError);
}

TEST(Linear, IdentityAndBias) {
  Rng rng = make_rng(4);
  const Tensor x = random_tensor({3, 3}, rng);
  Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  EXPECT_EQ(linear(Variable(x), Variable(eye), Variable(Tensor({3}, 0.0))).value(), x);

  const Tensor b({3}, {1.5, -2.0, 0.25});
  const Tensor y = linear(Variable(x), Variable(Tensor({3, 3}, 0.0)), Variable(b)).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(y.at(r, k), b[k]);
}

TEST(Linear, MatchesLoopOracle) {
  Rng rng = make_rng(5);
  const Tensor x = random_tensor({2, 3}, rng);
  const Tensor w = random_tensor({4, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor y = linear(Variable(x), Variable(w), Variable(b)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 4; ++k) {
      double acc = b[k];
      for (std::size_t d = 0; d < 3; ++d) acc += x.at(n, d) * w.at(k, d);
      EXPECT_NEAR(y.at(n, k), acc, 1e-12);
    }
}

TEST(Linear, InnerDimensionMismatch) {
  EXPECT_THROW(linear(Variable(Tensor({2, 3})), Variable(Tensor({4, 5})), Variable(Tensor({4}))), DimensionError);
}

TEST(Relu, ValuesAndGradient) {
  EXPECT_EQ(relu(Variable(Tensor({3}, {-1, 0, 2}))).value(), Tensor({3}, {0, 0, 2}));
  const Tensor pos({4}, {0.5, 1.0, 3.0, 7.0});
  EXPECT_EQ(relu(Variable(pos)).value(), pos);

  Variable x(Tensor({2}, {-0.5, 0.5}), true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = x.value()[i];
    const double numeric = (std::max(0.0, v + h) - std::max(0.0, v - h)) / (2 * h);
    EXPECT_NEAR(x.grad()[i], numeric, 1e-9);
  }
}

TEST(MaxPool, SmallWindow) {
  EXPECT_EQ(max_pool2d(Variable(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2).value(), Tensor({1, 1, 1, 1}, {4.0}));
}

TEST(MaxPool, ConstantInputRoutesGradientToFirstElement) {
  Variable x(Tensor({1, 1, 2, 2}, 3.0), true);
  const Variable y = max_pool2d(x, 2, 2);
  EXPECT_EQ(y.value()[0], 3.0);
  sum(y).backward();
  EXPECT_EQ(x.grad(), Tensor({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST(MaxPool, MatchesLoopOracle) {
  Rng rng = make_rng(6);
  const Tensor x = random_tensor({1, 1, 6, 6}, rng);
  const Tensor y = max_pool2d(Variable(x), 3, 2).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      double best = -1e300;
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) best = std::max(best, x.at(0, 0, oy * 2 + ky, ox * 2 + kx));
      EXPECT_EQ(y.at(0, 0, oy, ox), best);
    }
}

TEST(MaxPool, WindowLargerThanInputIsConfigError) {
  EXPECT_THROW(max_pool2d(Variable(Tensor({1, 1, 2, 2})), 3, 1), ConfigError);
}

TEST(GlobalAvgPool, ValuesAndResolutionIndependence) {
  EXPECT_EQ(global_avg_pool(Variable(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))).value(), Tensor({1, 1}, {2.5}));
  for (std::size_t side : {16u, 24u}) {
    const Tensor y = global_avg_pool(Variable(Tensor({1, 2, side, side}, 0.375))).value();
    EXPECT_EQ(y.shape(), (Shape{1, 2}));
    EXPECT_NEAR(y[0], 0.375, 1e-15);
  }
  Rng rng = make_rng(7);
  const Tensor x = random_tensor({2, 3, 5, 7}, rng);
  const Tensor y = global_avg_pool(Variable(x)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) acc += x.at(n, c, i, j);
      EXPECT_NEAR(y.at(n, c), acc / 35.0, 1e-12);
    }
}

TEST(SoftmaxCrossEntropy, LimitsAndUniform) {
  const std::vector<int> t{2};
  EXPECT_LT(softmax_cross_entropy(Variable(Tensor({1, 3}, {0, 0, 60})), t).item(), 1e-20);
  const std::vector<int> targets{3, 7};
  EXPECT_NEAR(softmax_cross_entropy(Variable(Tensor({2, 10}, 0.0)), targets).item(), std::log(10.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferencesAndRowsSumToZero) {
  Rng rng = make_rng(8);
  const Tensor logits = random_tensor({4, 6}, rng);
  const std::vector<int> targets{0, 5, 1, 3};
  const ScalarFn fn = [&](const Variable& v) { return softmax_cross_entropy(v, targets); };
  EXPECT_LT(finite_difference_gradcheck(fn, logits, 1e-5), 1e-6);

  Variable x(logits, true);
  fn(x).backward();
  for (std::size_t r = 0; r < 4; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 6; ++c) row += x.grad().at(r, c);
    EXPECT_NEAR(row, 0.0, 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, OutOfRangeTarget) {
  const std::vector<int> bad{4};
  EXPECT_THROW(softmax_cross_entropy(Variable(Tensor({1, 4})), bad), IndexError);
  const std::vector<int> negative{-1};
  EXPECT_THROW(softmax_cross_entropy(Variable(Tensor({1, 4})), negative), IndexError);
}

TEST(Sgd, MomentumRecurrence) {
  Parameter p("w", Tensor({1}, 0.0));
  std::vector<Parameter*> params{&p};
  p.var.grad_buffer()[0] = 1.0;
  sgd_momentum_step(params, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p.var.value()[0], -0.1, 1e-15);
  EXPECT_EQ(p.var.grad()[0], 0.0);
  p.var.grad_buffer()[0] = 1.0;
  sgd_momentum_step(params, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p.var.value()[0] - (-0.1), -0.19, 1e-15);
}

TEST(Sgd, ZeroGradientLeavesWeightUnchanged) {
  Parameter p("w", Tensor({2}, {0.5, -1.5}));
  std::vector<Parameter*> params{&p};
  p.var.grad_buffer();
  sgd_momentum_step(params, 0.1, 0.9, 0.0);
  EXPECT_EQ(p.var.value(), Tensor({2}, {0.5, -1.5}));
}

TEST(Sgd, MissingGradientIsStateError) {
  Parameter p("layer.weight", Tensor({1}, 0.0));
  std::vector<Parameter*> params{&p};
  EXPECT_THROW(sgd_momentum_step(params, 0.1, 0.9, 0.0), StateError);
}

TEST(Autodiff, LeavesAccumulateAcrossBackwardCalls) {
  Variable x(Tensor({2}, {1.0, 2.0}), true);
  const Variable y = sum(scale(x, 3.0));
  y.backward();
  y.backward();
  EXPECT_EQ(x.grad(), Tensor({2}, {6.0, 6.0}));
  x.zero_grad();
  EXPECT_EQ(x.grad(), Tensor({2}, {0.0, 0.0}));
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Variable x(Tensor({2}, {1.0, 2.0}), true);
  NoGradGuard guard;
  const Variable y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, ForwardIsBitReproducible) {
  Rng rng = make_rng(9);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const auto run = [&] { return global_avg_pool(relu(conv2d(Variable(x), Variable(w), std::nullopt, 1, 1))).value(); };
  EXPECT_EQ(run(), run());
}

TEST(Gradcheck, SumOfSquaresIsExact) {
  Rng rng = make_rng(10);
  const Tensor x = random_tensor({1, 7}, rng);
  const ScalarFn squares = [](const Variable& v) { return linear(v, v, Variable(Tensor({1}, 0.0))); };
  EXPECT_LT(finite_difference_gradcheck(squares, x, 1e-5), 1e-9);
}

TEST(Gradcheck, ConvReluLinearCrossEntropyComposite) {
  Rng rng = make_rng(11);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.4);
  const Tensor fw = random_tensor({5, 4}, rng);
  const Tensor fb = random_tensor({5}, rng);
  const std::vector<int> targets{4, 1};
  const ScalarFn fn = [&](const Variable& v) {
    Variable h = global_avg_pool(relu(conv2d(v, Variable(w), std::nullopt, 1, 1)));
    return softmax_cross_entropy(linear(h, Variable(fw), Variable(fb)), targets);
  };
  EXPECT_LT(finite_difference_gradcheck(fn, x, 1e-5), 1e-4);
}

TEST(Gradcheck, DeadReluGradientIsExactlyZero) {
  const Tensor x({2, 3}, {-1.0, -0.3, -2.0, -0.7, -5.0, -0.2});
  const ScalarFn fn = [](const Variable& v) { return sum(relu(v)); };
  Variable v(x, true);
  fn(v).backward();
  for (double g : v.grad().data()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(finite_difference_gradcheck(fn, x, 1e-5), 0.0);
}

TEST(Gradcheck, FullOperatorSuitePasses) {
  const auto results = run_gradcheck_suite(1e-5, 1e-4);
  EXPECT_GE(results.size(), 13u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_error;
}

}  // namespace
}  // namespace drnet
