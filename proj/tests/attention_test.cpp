// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace infini {
namespace {

using testing::TD;

AttentionConfig small_cfg(std::size_t seg = 4) {
  AttentionConfig c;
  c.heads = 2;
  c.d_model = 8;
  c.d_key = 4;
  c.d_value = 4;
  c.segment_length = seg;
  return c;
}

AttentionWeights<double> random_weights(std::mt19937_64& rng, double raw = 0.0) {
  auto r = [&](Shape s) { return testing::random_tensor(rng, s, -0.7, 0.7); };
  return {r({8, 8}), r({8, 8}), r({8, 8}), r({8, 8}), {TD::full({2}, raw, true)}};
}

TEST(Attention, HardSigmoidScalar) {
  EXPECT_EQ(hard_sigmoid(-6.0), 0.0);
  EXPECT_EQ(hard_sigmoid(0.0), 0.5);
  EXPECT_EQ(hard_sigmoid(6.0), 1.0);
  EXPECT_DOUBLE_EQ(hard_sigmoid(1.5), 0.75);
}

TEST(Attention, ConfigValidation) {
  auto c = small_cfg();
  EXPECT_NO_THROW(c.validate());
  c.d_model = 9;
  EXPECT_THROW(c.validate(), ContractError);
  c = small_cfg();
  c.segment_length = 0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Attention, SegmentCount) {
  EXPECT_EQ(segment_count(1, 64), 1u);
  EXPECT_EQ(segment_count(64, 64), 1u);
  EXPECT_EQ(segment_count(65, 64), 2u);
  EXPECT_EQ(segment_count(256, 64), 4u);
}

TEST(Attention, EmptyMemoryRetrievesZero) {
  std::mt19937_64 rng(1);
  auto q = testing::random_tensor(rng, {2, 3, 4}, -1, 1, false);
  auto r = memory_retrieve(q, MemoryState<double>::empty(2, 4, 4), 1e-6);
  for (double v : r.data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, EmptyUpdateLeavesStateUnchanged) {
  std::mt19937_64 rng(2);
  auto m = memory_update(MemoryState<double>::empty(2, 4, 3), testing::random_tensor(rng, {2, 5, 4}, -1, 1, false),
                         testing::random_tensor(rng, {2, 5, 3}, -1, 1, false));
  auto same = memory_update(m, TD(), TD());
  EXPECT_EQ(same.M.node(), m.M.node());
  EXPECT_EQ(same.N.node(), m.N.node());
}

TEST(Attention, UpdateMatchesOuterProductSum) {
  std::mt19937_64 rng(3);
  auto k = testing::random_tensor(rng, {1, 3, 2}, -2, 2, false);
  auto v = testing::random_tensor(rng, {1, 3, 2}, -2, 2, false);
  auto m = memory_update(MemoryState<double>::empty(1, 2, 2), k, v);
  auto f = [](double x) { return x > 0 ? x + 1 : std::exp(x); };
  for (std::size_t i = 0; i < 2; ++i) {
    double n = 0;
    for (std::size_t p = 0; p < 3; ++p) n += f(k[p * 2 + i]);
    EXPECT_NEAR(m.N[i], n, 1e-12);
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < 3; ++p) s += f(k[p * 2 + i]) * v[p * 2 + j];
      EXPECT_NEAR(m.M[i * 2 + j], s, 1e-12);
    }
  }
}

TEST(Attention, UpdateRejectsMismatchedShapes) {
  auto mem = MemoryState<double>::empty(2, 4, 3);
  EXPECT_THROW(memory_update(mem, TD::zeros({2, 5, 4}), TD::zeros({2, 4, 3})), ShapeError);
  EXPECT_THROW(memory_update(mem, TD::zeros({2, 5, 3}), TD::zeros({2, 5, 3})), ShapeError);
}

TEST(Attention, ShortInputIsPlainCausalAttentionScaledByOneMinusAlpha) {
  std::mt19937_64 rng(4);
  auto w = random_weights(rng, 1.5);  // alpha = 0.75
  auto x = testing::random_tensor(rng, {4, 8}, -1, 1, false);
  auto cfg = small_cfg(4);
  auto with_mem = infini_forward(x, w, cfg);
  // Only one segment: memory is empty, so the output is 0.25 * local.
  auto local = segmented_attention(x, w, cfg);
  for (std::size_t i = 0; i < local.size(); ++i) EXPECT_NEAR(with_mem[i], 0.25 * local[i], 1e-12);
}

TEST(Attention, GateFullyOpenUsesOnlyMemoryAfterFirstSegment) {
  std::mt19937_64 rng(5);
  auto w = random_weights(rng, 6.0);  // alpha = 1
  auto cfg = small_cfg(4);
  auto x = testing::random_tensor(rng, {8, 8}, -1, 1, false);
  auto y = infini_forward(x, w, cfg);
  // First segment: empty memory, alpha = 1, so exactly zero.
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(y[i], 0.0);
  // Memory retrieval is per row: changing row 5 leaves rows 4, 6 and 7 alone.
  auto x2 = TD(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  x2.mutable_data()[5 * 8] += 1.0;
  auto y2 = infini_forward(x2, w, cfg);
  for (std::size_t i = 4 * 8; i < 8 * 8; ++i) {
    if (i / 8 != 5) {
      EXPECT_EQ(y[i], y2[i]);
    }
  }
}

TEST(Attention, AlphaZeroMatchesSegmentedAttention) {
  std::mt19937_64 rng(6);
  auto w = random_weights(rng, -7.0);
  auto cfg = small_cfg(4);
  auto x = testing::random_tensor(rng, {16, 8}, -1, 1, false);
  auto a = infini_forward(x, w, cfg), b = segmented_attention(x, w, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Attention, DetachDoesNotChangeForwardValues) {
  std::mt19937_64 rng(7);
  auto w = random_weights(rng, 0.3);
  auto cfg = small_cfg(4);
  auto x = testing::random_tensor(rng, {13, 8}, -1, 1, false);
  auto a = infini_forward(x, w, cfg);
  cfg.memory_detach = true;
  auto b = infini_forward(x, w, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Attention, DetachBlocksGradientIntoEarlierSegmentKeys) {
  std::mt19937_64 rng(8);
  auto cfg = small_cfg(4);
  cfg.memory_detach = true;
  auto w = random_weights(rng, 0.3);
  auto x = testing::random_tensor(rng, {8, 8}, -1, 1);
  // Loss on the second segment only; with detach, segment-1 inputs reach it
  // through nothing (local attention is per segment).
  auto y = infini_forward(x, w, cfg);
  backward(sum(slice(y, 0, 4, 8)));
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}

TEST(Attention, MemoryCarriesInformationAcrossSegments) {
  std::mt19937_64 rng(9);
  auto w = random_weights(rng, 0.0);
  auto cfg = small_cfg(4);
  auto x = testing::random_tensor(rng, {8, 8}, -1, 1, false);
  auto y = infini_forward(x, w, cfg);
  auto x2 = TD(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  x2.mutable_data()[0] += 1.0;  // first token, first segment
  auto y2 = infini_forward(x2, w, cfg);
  double diff = 0;
  for (std::size_t i = 4 * 8; i < 8 * 8; ++i) diff = std::max(diff, std::abs(y[i] - y2[i]));
  EXPECT_GT(diff, 1e-6);
  cfg.memory_enabled = false;
  auto z = infini_forward(x, w, cfg), z2 = infini_forward(x2, w, cfg);
  for (std::size_t i = 4 * 8; i < 8 * 8; ++i) EXPECT_EQ(z[i], z2[i]);
}

TEST(Attention, RejectsWrongInputWidth) {
  std::mt19937_64 rng(10);
  auto w = random_weights(rng);
  EXPECT_THROW(infini_forward(TD::zeros({4, 7}), w, small_cfg()), ShapeError);
}

}  // namespace
}  // namespace infini
