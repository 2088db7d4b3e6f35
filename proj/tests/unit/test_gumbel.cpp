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
#include <numbers>

#include <gtest/gtest.h>

#include "drnet/error.hpp"
#include "drnet/gradcheck.hpp"
#include "drnet/gumbel.hpp"
#include "drnet/ops.hpp"

namespace drnet {
namespace {

Tensor rows(std::size_t n, const std::vector<double>& row) {
  Tensor t({n, row.size()});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < row.size(); ++j) t.at(r, j) = row[j];
  return t;
}

TEST(Gumbel, AnalyticNoiseValues) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-std::numbers::e)), -1.0, 1e-15);
}

TEST(Gumbel, MomentsMatchGumbelDistribution) {
  Rng rng = make_rng(123);
  const Tensor g = sample_gumbel({1000000}, rng);
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.numel());
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.numel() - 1);
  EXPECT_NEAR(mean, std::numbers::egamma, 0.01);
  EXPECT_NEAR(var, std::numbers::pi * std::numbers::pi / 6.0, 0.02);
  EXPECT_TRUE(g.all_finite());
}

TEST(GumbelSoftmax, ZeroNoiseUnitTemperatureRecoversP) {
  const Tensor p = rows(2, {0.6, 0.3, 0.1});
  const Tensor soft = gumbel_softmax_soft(Variable(p), Tensor(p.shape(), 0.0), 1.0).value();
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(soft[i], p[i], 1e-9);
}

TEST(GumbelSoftmax, HighTemperatureIsUniform) {
  const Tensor p = rows(1, {0.7, 0.2, 0.1});
  const Tensor soft = gumbel_softmax_soft(Variable(p), Tensor(p.shape(), 0.0), 1e4).value();
  for (double v : soft.data()) EXPECT_LT(std::abs(v - 1.0 / 3.0), 1e-3);
}

TEST(GumbelSoftmax, HalfTemperatureSquaresAndRenormalizes) {
  const Tensor p = rows(1, {0.7, 0.2, 0.1});
  const Tensor soft = gumbel_softmax_soft(Variable(p), Tensor(p.shape(), 0.0), 0.5).value();
  const double z = 0.49 + 0.04 + 0.01;
  const double expected[] = {0.49 / z, 0.04 / z, 0.01 / z};
  EXPECT_NEAR(soft[0], 0.9074, 1e-3);
  EXPECT_NEAR(soft[1], 0.0741, 1e-3);
  EXPECT_NEAR(soft[2], 0.0185, 1e-3);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(soft[j], expected[j], 1e-9);
}

TEST(StraightThrough, DegenerateDistributionAlwaysPicksItsMode) {
  Rng rng = make_rng(5);
  GumbelConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const SelectionVector s = straight_through_select(Variable(rows(1, {1.0, 0.0, 0.0})), cfg, &rng);
    EXPECT_EQ(s.chosen_index[0], 0);
    EXPECT_EQ(s.hard.value(), rows(1, {1, 0, 0}));
  }
}

TEST(StraightThrough, NoiseFreeSelectionIsArgmax) {
  GumbelConfig cfg;
  cfg.sample_noise = false;
  const SelectionVector s = straight_through_select(Variable(rows(3, {0.2, 0.5, 0.3})), cfg, nullptr);
  EXPECT_EQ(s.chosen_index, (std::vector<int>{1, 1, 1}));
}

TEST(StraightThrough, ExactTiesPreferTheLargestIndex) {
  const double row[] = {0.4, 0.2, 0.4};
  EXPECT_EQ(argmax_prefer_last(row, 3), 2);
  GumbelConfig cfg;
  cfg.sample_noise = false;
  EXPECT_EQ(straight_through_select(Variable(rows(1, {0.4, 0.2, 0.4})), cfg, nullptr).chosen_index[0], 2);
}

TEST(StraightThrough, SelectionFrequenciesMatchP) {
  Rng rng = make_rng(77);
  GumbelConfig cfg;
  const std::size_t n = 100000;
  const SelectionVector s = straight_through_select(Variable(rows(n, {0.5, 0.3, 0.2})), cfg, &rng);
  std::vector<double> freq(3, 0.0);
  for (int k : s.chosen_index) freq[static_cast<std::size_t>(k)] += 1.0 / n;
  EXPECT_NEAR(freq[0], 0.5, 0.02);
  EXPECT_NEAR(freq[1], 0.3, 0.02);
  EXPECT_NEAR(freq[2], 0.2, 0.02);
}

TEST(StraightThrough, RowInvariants) {
  Rng rng = make_rng(8);
  GumbelConfig cfg;
  cfg.tau = 0.7;
  const Tensor p = rows(50, {0.1, 0.25, 0.4, 0.25});
  const Tensor g = sample_gumbel(p.shape(), rng);
  const SelectionVector s = straight_through_select(Variable(p), g, cfg);
  for (std::size_t r = 0; r < 50; ++r) {
    double soft_sum = 0.0, hard_sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_GT(s.soft.value().at(r, j), 0.0);
      soft_sum += s.soft.value().at(r, j);
      hard_sum += s.hard.value().at(r, j);
    }
    EXPECT_NEAR(soft_sum, 1.0, 1e-9);
    EXPECT_EQ(hard_sum, 1.0);
    EXPECT_EQ(s.hard.value().at(r, static_cast<std::size_t>(s.chosen_index[r])), 1.0);
    EXPECT_EQ(argmax_prefer_last(s.soft.value().raw() + r * 4, 4), s.chosen_index[r]);
  }
}

TEST(StraightThrough, ShiftingLogProbabilitiesKeepsTheChoice) {
  Rng rng = make_rng(9);
  GumbelConfig cfg;
  const Tensor p = rows(20, {0.3, 0.45, 0.25});
  const Tensor g = sample_gumbel(p.shape(), rng);
  Tensor scaled = p;
  for (double& v : scaled.data()) v *= 0.5;  // log p - log 2
  cfg.eps = 1e-300;
  EXPECT_EQ(straight_through_select(Variable(p), g, cfg).chosen_index,
            straight_through_select(Variable(scaled), g, cfg).chosen_index);
}

TEST(StraightThrough, GradientEqualsSoftRelaxationGradient) {
  Rng rng = make_rng(10);
  GumbelConfig cfg;
  cfg.tau = 0.8;
  const Tensor p = rows(4, {0.2, 0.5, 0.3});
  const Tensor g = sample_gumbel(p.shape(), rng);
  const Tensor c = rows(4, {3.0, -1.0, 2.0});

  Variable via_hard(p, true);
  weighted_sum(straight_through_select(via_hard, g, cfg).hard, c).backward();
  Variable via_soft(p, true);
  weighted_sum(gumbel_softmax_soft(via_soft, g, cfg.tau, cfg.eps), c).backward();
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(via_hard.grad()[i], via_soft.grad()[i], 1e-8);

  const ScalarFn soft_fn = [&](const Variable& v) { return weighted_sum(gumbel_softmax_soft(v, g, cfg.tau, cfg.eps), c); };
  const ScalarFn hard_fn = [&](const Variable& v) { return weighted_sum(straight_through_select(v, g, cfg).hard, c); };
  EXPECT_LT(finite_difference_gradcheck(hard_fn, soft_fn, p, 1e-5), 1e-6);
}

TEST(StraightThrough, NoiseFreeSelectionIsBitReproducible) {
  GumbelConfig cfg;
  cfg.sample_noise = false;
  const Tensor p = rows(3, {0.33, 0.34, 0.33});
  const auto a = straight_through_select(Variable(p), cfg, nullptr);
  const auto b = straight_through_select(Variable(p), cfg, nullptr);
  EXPECT_EQ(a.chosen_index, b.chosen_index);
  EXPECT_EQ(a.soft.value(), b.soft.value());
}

TEST(StraightThrough, SamplingWithoutRngIsStateError) {
  GumbelConfig cfg;
  EXPECT_THROW(straight_through_select(Variable(rows(1, {0.5, 0.5})), cfg, nullptr), StateError);
}

}  // namespace
}  // namespace drnet
