// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every hyperparameter of a run, a text format for it and
// named presets.
//
// Text format: one `key = value` per line, `#` starts a comment, lists are
// comma separated. Unknown keys are errors.

#ifndef INFINI_CONFIG_HPP_
#define INFINI_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "infini/data.hpp"
#include "infini/model.hpp"
#include "infini/optim.hpp"

namespace infini {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TrainMode { kPretrain, kFinetune };

struct TrainConfig {
  TrainMode mode = TrainMode::kPretrain;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t seq_len = 256;
  Schedule schedule{6e-4, 200, 2000, 6e-5};
  AdamWConfig adamw;
  double init_std = 0.02;
  std::size_t checkpoint_every = 500;
  std::size_t snapshot_every = 100;
  std::size_t finetune_min_context = 64;
  std::size_t finetune_max_context = 200;
  std::size_t key_digits = 5;
};

struct EvalConfig {
  std::vector<std::size_t> context_lengths = desk_grid_lengths(64);
  std::vector<double> depths = table_depths();
  std::size_t samples_per_cell = 20;
};

struct RunConfig {
  ModelConfig model = desk_model_config();
  CorpusSpec corpus;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const {
    model.validate();
    train.schedule.validate();
    if (train.batch_size == 0 || train.seq_len < 2) throw ConfigError("train.batch_size and train.seq_len must be positive");
    if (train.finetune_min_context < min_context_length(train.key_digits) ||
        train.finetune_max_context < train.finetune_min_context) {
      throw ConfigError("train.finetune_min_context/max_context: invalid range");
    }
    if (train.mode == TrainMode::kFinetune &&
        train.finetune_max_context + kQueryText.size() + train.key_digits > train.seq_len + 1) {
      throw ConfigError("train.finetune_max_context: samples would exceed train.seq_len");
    }
    if (corpus.mean_length < corpus.median_length) throw ConfigError("corpus.mean_length must be >= corpus.median_length");
  }
};

namespace detail {

template <class U>
std::string fmt(const U& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
inline std::string fmt(bool v) { return v ? "true" : "false"; }

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    auto r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(r);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class U, class F>
std::vector<U> parse_list(const std::string& v, F parse_one) {
  std::vector<U> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_one(item));
  }
  return out;
}

template <class U>
std::string fmt_list(const std::vector<U>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// Every configurable field, in the order it is printed.
inline const std::vector<ConfigField>& config_fields() {
  using namespace detail;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
#define INFINI_SIZE_FIELD(KEY, MEMBER, HELP)                                                                 \
  f.push_back({KEY, HELP, [](const RunConfig& c) { return fmt(c.MEMBER); },                                 \
               [](RunConfig& c, const std::string& v) { c.MEMBER = parse_size(KEY, v); }})
#define INFINI_REAL_FIELD(KEY, MEMBER, HELP)                                                                 \
  f.push_back({KEY, HELP, [](const RunConfig& c) { return fmt(c.MEMBER); },                                 \
               [](RunConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); }})
#define INFINI_BOOL_FIELD(KEY, MEMBER, HELP)                                                                 \
  f.push_back({KEY, HELP, [](const RunConfig& c) { return fmt(c.MEMBER); },                                 \
               [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }})
    INFINI_SIZE_FIELD("model.layers", model.layers, "decoder layers");
    INFINI_SIZE_FIELD("model.d_model", model.d_model, "hidden size");
    INFINI_SIZE_FIELD("model.d_ff", model.d_ff, "MLP inner size");
    INFINI_SIZE_FIELD("model.heads", model.heads, "attention heads");
    INFINI_SIZE_FIELD("model.kv_heads", model.kv_heads, "key/value heads (must equal heads)");
    INFINI_SIZE_FIELD("model.vocab_size", model.vocab_size, "vocabulary size");
    INFINI_SIZE_FIELD("model.max_context", model.max_context, "longest sequence the model is configured for");
    INFINI_REAL_FIELD("model.rope_base", model.rope_base, "rotary position base");
    INFINI_REAL_FIELD("model.norm_eps", model.norm_eps, "RMSNorm epsilon");
    INFINI_BOOL_FIELD("model.tie_embeddings", model.tie_embeddings, "share token embedding and LM head");
    INFINI_SIZE_FIELD("attention.segment_length", model.attention.segment_length, "tokens per attention segment");
    INFINI_BOOL_FIELD("attention.memory_enabled", model.attention.memory_enabled, "compressive memory on/off");
    INFINI_REAL_FIELD("attention.balance_init", model.attention.balance_init, "initial raw balance gate");
    INFINI_BOOL_FIELD("attention.memory_detach", model.attention.memory_detach,
                      "stop gradients through memory across segments");
    INFINI_REAL_FIELD("attention.epsilon_retrieve", model.attention.epsilon_retrieve,
                      "denominator guard for memory retrieval");
    f.push_back({"train.mode", "pretrain | finetune",
                 [](const RunConfig& c) { return std::string(c.train.mode == TrainMode::kPretrain ? "pretrain" : "finetune"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "pretrain") c.train.mode = TrainMode::kPretrain;
                   else if (v == "finetune") c.train.mode = TrainMode::kFinetune;
                   else throw ConfigError("train.mode: expected pretrain or finetune, got '" + v + "'");
                 }});
    INFINI_SIZE_FIELD("train.steps", train.steps, "optimizer steps to run");
    INFINI_SIZE_FIELD("train.batch_size", train.batch_size, "sequences per step");
    INFINI_SIZE_FIELD("train.seq_len", train.seq_len, "tokens per training sequence");
    INFINI_REAL_FIELD("train.base_lr", train.schedule.base_lr, "peak learning rate");
    INFINI_SIZE_FIELD("train.warmup_steps", train.schedule.warmup_steps, "linear warmup steps");
    INFINI_SIZE_FIELD("train.total_steps", train.schedule.total_steps, "step at which cosine decay reaches floor_lr");
    INFINI_REAL_FIELD("train.floor_lr", train.schedule.floor_lr, "learning rate at the end of cosine decay");
    INFINI_REAL_FIELD("train.beta1", train.adamw.beta1, "AdamW beta1");
    INFINI_REAL_FIELD("train.beta2", train.adamw.beta2, "AdamW beta2");
    INFINI_REAL_FIELD("train.adam_eps", train.adamw.eps, "AdamW epsilon");
    INFINI_REAL_FIELD("train.weight_decay", train.adamw.weight_decay, "decoupled weight decay (matrices only)");
    INFINI_REAL_FIELD("train.clip_norm", train.adamw.clip_norm, "global gradient norm clip");
    INFINI_REAL_FIELD("train.init_std", train.init_std, "stddev of normal weight init");
    INFINI_SIZE_FIELD("train.checkpoint_every", train.checkpoint_every, "steps between checkpoints (0 = final only)");
    INFINI_SIZE_FIELD("train.snapshot_every", train.snapshot_every, "steps between balance-factor snapshots");
    INFINI_SIZE_FIELD("train.finetune_min_context", train.finetune_min_context, "shortest fine-tuning haystack");
    INFINI_SIZE_FIELD("train.finetune_max_context", train.finetune_max_context, "longest fine-tuning haystack");
    INFINI_SIZE_FIELD("train.key_digits", train.key_digits, "passkey digits");
    INFINI_SIZE_FIELD("corpus.num_documents", corpus.num_documents, "documents written by generate-data");
    INFINI_REAL_FIELD("corpus.median_length", corpus.median_length, "target median document length (tokens)");
    INFINI_REAL_FIELD("corpus.mean_length", corpus.mean_length, "target mean document length (tokens)");
    INFINI_REAL_FIELD("corpus.recall_fraction", corpus.recall_fraction, "share of key-recall documents");
    INFINI_REAL_FIELD("corpus.copy_fraction", corpus.copy_fraction, "share of string-copy documents");
    f.push_back({"eval.context_lengths", "passkey grid haystack lengths",
                 [](const RunConfig& c) { return fmt_list(c.eval.context_lengths); },
                 [](RunConfig& c, const std::string& v) {
                   c.eval.context_lengths =
                       parse_list<std::size_t>(v, [](const std::string& s) { return parse_size("eval.context_lengths", s); });
                 }});
    f.push_back({"eval.depths", "passkey grid needle depths in [0, 1]",
                 [](const RunConfig& c) { return fmt_list(c.eval.depths); },
                 [](RunConfig& c, const std::string& v) {
                   c.eval.depths = parse_list<double>(v, [](const std::string& s) { return parse_real("eval.depths", s); });
                 }});
    INFINI_SIZE_FIELD("eval.samples_per_cell", eval.samples_per_cell, "samples per grid cell");
    f.push_back({"seed", "master seed", [](const RunConfig& c) { return fmt(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = parse_size("seed", v); }});
    INFINI_BOOL_FIELD("deterministic", deterministic, "single-threaded fixed-order kernels");
#undef INFINI_SIZE_FIELD
#undef INFINI_REAL_FIELD
#undef INFINI_BOOL_FIELD
    return f;
  }();
  return fields;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(c, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown config field '" + key + "'");
}

/// Applies `key = value` lines on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

/// Desk-scale Infini-attention pretraining.
inline RunConfig desk_pretrain_config() {
  RunConfig c;
  c.model = desk_model_config();
  c.train.mode = TrainMode::kPretrain;
  c.train.steps = 1000;
  c.train.batch_size = 8;
  c.train.seq_len = 256;
  c.train.schedule = {6e-4, 100, 1000, 6e-5};
  return c;
}

/// Same as desk_pretrain with the memory disabled and twice the learning rate.
inline RunConfig desk_baseline_config() {
  RunConfig c = desk_pretrain_config();
  c.model.attention.memory_enabled = false;
  c.train.schedule.base_lr *= 2.0;
  c.train.schedule.floor_lr *= 2.0;
  return c;
}

/// Fine-tuning schedule on passkey data: 500 steps, warmup over the first
/// tenth, cosine decay to 1/25 of the peak.
inline RunConfig desk_finetune_config(RunConfig pretrain = desk_pretrain_config()) {
  RunConfig c = std::move(pretrain);
  c.train.mode = TrainMode::kFinetune;
  c.train.steps = 500;
  c.train.batch_size = 16;
  c.train.schedule = {c.train.schedule.base_lr * 1.25, 50, 500, c.train.schedule.base_lr * 1.25 / 25.0};
  return c;
}

/// Full-size pretraining recipe: 30,000 steps of 4 x 8,192 tokens, AdamW
/// (0.9, 0.95, 1e-8), clip 1.0, weight decay 0.1, lr 6e-5 with 500 warmup
/// steps and cosine decay to 6e-6.
inline RunConfig full_pretrain_config() {
  RunConfig c;
  c.model = full_model_config();
  c.train.mode = TrainMode::kPretrain;
  c.train.steps = 30000;
  c.train.batch_size = 4;
  c.train.seq_len = 8192;
  c.train.schedule = {6e-5, 500, 30000, 6e-6};
  c.corpus.median_length = 418;
  c.corpus.mean_length = 716;
  c.eval.context_lengths = full_grid_lengths();
  return c;
}

/// Memory disabled; base lr raised to 1.2e-4.
inline RunConfig full_baseline_config() {
  RunConfig c = full_pretrain_config();
  c.model.attention.memory_enabled = false;
  c.train.schedule.base_lr = 1.2e-4;
  return c;
}

/// 500 steps, batch 64, lr 7.5e-5, 50 warmup steps, cosine to 3e-6.
inline RunConfig full_finetune_config() {
  RunConfig c = full_pretrain_config();
  c.train.mode = TrainMode::kFinetune;
  c.train.steps = 500;
  c.train.batch_size = 64;
  c.train.schedule = {7.5e-5, 50, 500, 3e-6};
  c.train.finetune_min_context = 1024;
  c.train.finetune_max_context = 8192 - kQueryText.size() - 5;
  return c;
}

inline std::vector<std::string> preset_names() {
  return {"desk_pretrain", "desk_baseline", "desk_finetune", "desk_baseline_finetune",
          "full_pretrain", "full_baseline", "full_finetune"};
}

inline RunConfig preset_config(const std::string& name) {
  if (name == "desk_pretrain") return desk_pretrain_config();
  if (name == "desk_baseline") return desk_baseline_config();
  if (name == "desk_finetune") return desk_finetune_config();
  if (name == "desk_baseline_finetune") return desk_finetune_config(desk_baseline_config());
  if (name == "full_pretrain") return full_pretrain_config();
  if (name == "full_baseline") return full_baseline_config();
  if (name == "full_finetune") return full_finetune_config();
  throw ConfigError("unknown preset '" + name + "'");
}

/// A preset name, or a path to a config file applied over the defaults.
inline RunConfig load_config(const std::string& name_or_path) {
  for (const auto& p : preset_names()) {
    if (p == name_or_path) return preset_config(p);
  }
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("config '" + name_or_path + "' is neither a preset nor a readable file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Keys whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  for (const auto& f : config_fields()) {
    if (f.get(a) != f.get(b)) out.push_back(f.key);
  }
  return out;
}

}  // namespace infini

#endif  // INFINI_CONFIG_HPP_
