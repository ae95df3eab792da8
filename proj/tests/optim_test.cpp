// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

namespace infini {
namespace {

const Schedule kFull{6e-5, 500, 30000, 6e-6};

TEST(Schedule, LinearWarmup) {
  EXPECT_EQ(lr_at(kFull, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(kFull, 250), 3e-5);
  EXPECT_DOUBLE_EQ(lr_at(kFull, 499), 6e-5 * 499.0 / 500.0);
}

TEST(Schedule, PeakAndFloorAreExact) {
  EXPECT_DOUBLE_EQ(lr_at(kFull, 500), 6e-5);
  EXPECT_DOUBLE_EQ(lr_at(kFull, 30000), 6e-6);
  EXPECT_DOUBLE_EQ(lr_at(kFull, 50000), 6e-6);
}

TEST(Schedule, CosineMidpointAndMonotoneDecay) {
  const std::size_t mid = 500 + (30000 - 500) / 2;
  EXPECT_NEAR(lr_at(kFull, mid), 0.5 * (6e-5 + 6e-6), 1e-15);
  for (std::size_t t = 501; t <= 30000; t += 97) EXPECT_LE(lr_at(kFull, t), lr_at(kFull, t - 1));
}

TEST(Schedule, ContinuousAtBoundaries) {
  EXPECT_NEAR(lr_at(kFull, 499), lr_at(kFull, 500), 6e-5 / 500 + 1e-15);
  EXPECT_NEAR(lr_at(kFull, 29999), lr_at(kFull, 30000), 1e-12);
}

TEST(Schedule, Validation) {
  Schedule s = kFull;
  EXPECT_NO_THROW(s.validate());
  s.total_steps = 400;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = kFull;
  s.base_lr = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Clip, ScalesAboveThreshold) {
  std::vector<double> a{3.0}, b{4.0};
  std::vector<std::span<double>> g{a, b};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a[0], 0.6);
  EXPECT_DOUBLE_EQ(b[0], 0.8);
}

TEST(Clip, LeavesSmallGradientsAndZeroAlone) {
  std::vector<double> a{0.3}, b{0.4};
  std::vector<std::span<double>> g{a, b};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(g, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(a[0], 0.3);
  std::vector<double> z(4, 0.0);
  std::vector<std::span<double>> gz{z};
  EXPECT_EQ(clip_global_norm<double>(gz, 1.0), 0.0);
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamWConfig hp;
  std::vector<double> theta{2.0, -1.0}, g{0.0, 0.0}, m(2), v(2);
  adamw_update<double>(theta, g, m, v, 1, 1e-2, hp, true);
  EXPECT_DOUBLE_EQ(theta[0], 2.0 * (1 - 1e-2 * 0.1));
  EXPECT_DOUBLE_EQ(theta[1], -1.0 * (1 - 1e-2 * 0.1));
  adamw_update<double>(theta, g, m, v, 2, 1e-2, hp, false);
  EXPECT_DOUBLE_EQ(theta[0], 2.0 * (1 - 1e-2 * 0.1));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamWConfig hp;
  hp.eps = 0.0;
  std::vector<double> theta{1.0, 1.0}, g{0.5, -3.0}, m(2), v(2);
  adamw_update<double>(theta, g, m, v, 1, 1e-3, hp, false);
  EXPECT_NEAR(theta[0], 1.0 - 1e-3, 1e-15);
  EXPECT_NEAR(theta[1], 1.0 + 1e-3, 1e-15);
  EXPECT_NEAR(m[0], 0.05, 1e-15);
  EXPECT_NEAR(v[1], 0.05 * 9.0, 1e-15);
}

TEST(AdamW, RejectsMismatchedBuffers) {
  std::vector<double> theta(2), g(3), m(2), v(2);
  EXPECT_THROW(adamw_update<double>(theta, g, m, v, 1, 1e-3, AdamWConfig{}, true), std::invalid_argument);
}

TEST(AdamW, MinimizesQuadratic) {
  AdamWConfig hp;
  hp.weight_decay = 0.0;
  std::vector<double> theta{5.0}, g(1), m(1), v(1);
  for (std::size_t t = 1; t <= 3000; ++t) {
    g[0] = 2.0 * (theta[0] - 1.5);
    adamw_update<double>(theta, g, m, v, t, 1e-2, hp, false);
  }
  EXPECT_NEAR(theta[0], 1.5, 1e-2);
}

}  // namespace
}  // namespace infini
