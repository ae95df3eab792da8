// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "support.hpp"

namespace infini {
namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

TEST(Config, FormatParseRoundTripForEveryPreset) {
  for (const auto& name : preset_names()) {
    const auto c = preset_config(name);
    const auto text = format_config(c);
    EXPECT_EQ(format_config(parse_config(text)), text) << name;
    EXPECT_TRUE(config_diff(c, parse_config(text)).empty()) << name;
  }
}

TEST(Config, ParseIgnoresCommentsAndWhitespace) {
  auto c = parse_config("# comment\n\n  train.steps =  17   # trailing\nseed=9\n");
  EXPECT_EQ(c.train.steps, 17u);
  EXPECT_EQ(c.seed, 9u);
}

TEST(Config, ListsAndEnums) {
  auto c = parse_config("eval.context_lengths = 32, 96\neval.depths = 0, 0.5\ntrain.mode = finetune\n");
  EXPECT_EQ(c.eval.context_lengths, (std::vector<std::size_t>{32, 96}));
  EXPECT_EQ(c.eval.depths, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(c.train.mode, TrainMode::kFinetune);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("no.such.key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps = many\n"), ConfigError);
  EXPECT_THROW(parse_config("attention.memory_enabled = maybe\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/file.cfg"), ConfigError);
  EXPECT_THROW(preset_config("nope"), ConfigError);
}

TEST(Config, LoadFromFileAppliesOverDefaults) {
  const auto p = std::filesystem::temp_directory_path() / "infini_config_test.cfg";
  std::ofstream(p) << "train.batch_size = 3\n";
  auto c = load_config(p.string());
  EXPECT_EQ(c.train.batch_size, 3u);
  EXPECT_EQ(config_diff(c, RunConfig{}), std::vector<std::string>{"train.batch_size"});
  std::filesystem::remove(p);
}

TEST(Config, EveryFieldHasHelp) {
  for (const auto& f : config_fields()) EXPECT_FALSE(f.help.empty()) << f.key;
}

TEST(Config, ValidateRejectsInconsistentSettings) {
  RunConfig c;
  c.train.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.corpus.mean_length = c.corpus.median_length - 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Presets, BaselineDiffersOnlyInMemoryAndLearningRate) {
  for (auto [inf, base] : {std::pair{desk_pretrain_config(), desk_baseline_config()},
                           std::pair{full_pretrain_config(), full_baseline_config()}}) {
    for (const auto& key : config_diff(inf, base)) {
      EXPECT_TRUE(key == "attention.memory_enabled" || key == "train.base_lr" || key == "train.floor_lr") << key;
    }
    EXPECT_TRUE(contains(config_diff(inf, base), "attention.memory_enabled"));
  }
}

TEST(Presets, FinetuneKeepsModelShape) {
  for (auto [pre, ft] : {std::pair{desk_pretrain_config(), desk_finetune_config()},
                         std::pair{full_pretrain_config(), full_finetune_config()}}) {
    for (const auto& key : config_diff(pre, ft)) EXPECT_NE(key.rfind("model.", 0), 0u) << key;
    EXPECT_EQ(ft.train.mode, TrainMode::kFinetune);
    EXPECT_NO_THROW(ft.validate());
  }
}

TEST(Presets, FullSizeNumbers) {
  const auto p = full_pretrain_config();
  EXPECT_EQ(p.train.steps, 30000u);
  EXPECT_EQ(p.train.batch_size, 4u);
  EXPECT_EQ(p.train.seq_len, 8192u);
  EXPECT_EQ(p.model.attention.segment_length, 1024u);
  EXPECT_DOUBLE_EQ(p.train.schedule.base_lr, 6e-5);
  EXPECT_DOUBLE_EQ(full_baseline_config().train.schedule.base_lr, 1.2e-4);
  const auto f = full_finetune_config();
  EXPECT_EQ(f.train.batch_size, 64u);
  EXPECT_DOUBLE_EQ(f.train.schedule.base_lr, 7.5e-5);
  EXPECT_DOUBLE_EQ(f.train.schedule.floor_lr, 3e-6);
}

}  // namespace
}  // namespace infini
