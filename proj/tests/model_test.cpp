// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"

namespace infini {
namespace {

TEST(Model, ParameterCountMatchesClosedForm) {
  for (bool tied : {false, true}) {
    auto cfg = testing::tiny_model_config();
    cfg.tie_embeddings = tied;
    auto w = init_weights<double>(cfg, 1);
    EXPECT_EQ(w.parameter_count(), count_parameters(cfg));
  }
  auto desk = desk_model_config();
  EXPECT_EQ(init_weights<float>(desk, 1).parameter_count(), count_parameters(desk));
}

TEST(Model, FullShapeHasAbout300MParameters) {
  // 12 x (4 d^2 + 3 d d_ff) + 2 V d at d = 1024, d_ff = 4096, V = 49152.
  const auto n = count_parameters(full_model_config());
  EXPECT_EQ(n, 12u * (4u * 1024 * 1024 + 8 + 2 * 1024 + 3u * 1024 * 4096) + 1024 + 2u * 49152 * 1024);
  EXPECT_GT(n, 250'000'000u);
  EXPECT_LT(n, 320'000'000u);
}

TEST(Model, ParameterNamesAreUniqueAndStable) {
  auto w = init_weights<double>(testing::tiny_model_config(), 2);
  std::set<std::string> names;
  for (auto& [n, p] : w.named_parameters()) EXPECT_TRUE(names.insert(n).second) << n;
  EXPECT_TRUE(names.count("tok_embeddings"));
  EXPECT_TRUE(names.count("layers.1.attention.gate"));
  EXPECT_TRUE(names.count("output"));
}

TEST(Model, RejectsGroupedQueryAttention) {
  auto cfg = testing::tiny_model_config();
  cfg.kv_heads = 1;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(Model, InitIsDeterministicInSeed) {
  auto cfg = testing::tiny_model_config();
  auto a = init_weights<double>(cfg, 5), b = init_weights<double>(cfg, 5), c = init_weights<double>(cfg, 6);
  EXPECT_EQ(a.token_embedding[7], b.token_embedding[7]);
  EXPECT_NE(a.token_embedding[7], c.token_embedding[7]);
}

TEST(Model, ForwardShapeAndInitialLossNearUniform) {
  auto cfg = testing::tiny_model_config();
  auto w = init_weights<double>(cfg, 3);
  std::mt19937_64 rng(3);
  auto tokens = testing::random_tokens(rng, 11, cfg.vocab_size);
  auto logits = forward<double>(tokens, w, cfg);
  EXPECT_EQ(logits.shape(), (Shape{11, cfg.vocab_size}));
  std::vector<std::int32_t> t(tokens.begin(), tokens.end());
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(double(cfg.vocab_size)), 0.05);
}

TEST(Model, TiedEmbeddingsUseTransposedTable) {
  auto cfg = testing::tiny_model_config();
  cfg.tie_embeddings = true;
  auto w = init_weights<double>(cfg, 4);
  EXPECT_FALSE(w.lm_head);
  std::vector<std::int32_t> tokens{1, 2, 3};
  EXPECT_EQ(forward<double>(tokens, w, cfg).shape(), (Shape{3, cfg.vocab_size}));
}

TEST(Model, RejectsOutOfVocabularyTokens) {
  auto cfg = testing::tiny_model_config();
  auto w = init_weights<double>(cfg, 4);
  std::vector<std::int32_t> tokens{1, static_cast<std::int32_t>(cfg.vocab_size)};
  EXPECT_THROW(forward<double>(tokens, w, cfg), IndexError);
}

TEST(Model, CastPreservesValuesWithinPrecision) {
  auto cfg = testing::tiny_model_config();
  auto w = init_weights<double>(cfg, 8);
  auto f = cast_weights<float>(w);
  std::vector<std::int32_t> tokens{3, 1, 4, 1, 5, 9, 2, 6};
  auto a = forward<double>(tokens, w, cfg);
  auto b = forward<float>(tokens, f, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(Model, BalanceFactorsFollowGateInit) {
  auto cfg = testing::tiny_model_config();
  cfg.attention.balance_init = 1.5;
  auto alpha = balance_factors(init_weights<double>(cfg, 1));
  ASSERT_EQ(alpha.size(), cfg.layers);
  for (auto& row : alpha) {
    ASSERT_EQ(row.size(), cfg.heads);
    for (double a : row) EXPECT_DOUBLE_EQ(a, 0.75);
  }
}

TEST(Model, WholeModelGradientsMatchFiniteDifferences) {
  for (bool memory : {true, false}) {
    const auto cfg = testing::tiny_model_config(memory);
    std::mt19937_64 rng(21);
    auto w = init_weights<double>(cfg, 21, 0.3);
    testing::randomize_gates(w, rng);
    auto tokens = testing::random_tokens(rng, 10, cfg.vocab_size);
    TokenSeq in(tokens.begin(), tokens.end() - 1);
    std::vector<std::int32_t> tg(tokens.begin() + 1, tokens.end());
    std::vector<testing::TD> leaves;
    for (auto& [n, p] : w.named_parameters()) leaves.push_back(*p);
    auto st = testing::gradcheck(leaves, [&] { return cross_entropy(forward<double>(in, w, cfg), tg); }, 1e-3);
    EXPECT_GE(double(st.within) / double(st.checked), 0.95) << "memory=" << memory << " max rel " << st.max_rel;
  }
}

}  // namespace
}  // namespace infini
