// SPDX-License-Identifier: Apache-2.0
//
// Training loop: batch construction, one optimizer step, checkpoint
// conversion and the run driver.

#ifndef INFINI_TRAIN_HPP_
#define INFINI_TRAIN_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "infini/checkpoint.hpp"
#include "infini/config.hpp"
#include "infini/data.hpp"
#include "infini/model.hpp"
#include "infini/optim.hpp"
#include "infini/telemetry.hpp"
#include "infini/tensor.hpp"

namespace infini {

/// Inputs and next-token targets; kIgnoreTarget masks a position.
struct Example {
  TokenSeq inputs;
  std::vector<std::int32_t> targets;

  std::size_t counted() const {
    std::size_t n = 0;
    for (auto t : targets) n += t != kIgnoreTarget ? 1 : 0;
    return n;
  }
};

/// Deterministic in (config, step, index).
inline Example make_example(const RunConfig& cfg, std::size_t step, std::size_t index) {
  Example ex;
  if (cfg.train.mode == TrainMode::kPretrain) {
    auto seq = packed_sequence(cfg.corpus, cfg.train.seq_len + 1, cfg.seed, step, index);
    ex.inputs.assign(seq.begin(), seq.end() - 1);
    ex.targets.assign(seq.begin() + 1, seq.end());
    return ex;
  }
  // Fine-tuning: loss only on the answer digits.
  auto s = make_finetune_sample(cfg.train.finetune_min_context, cfg.train.finetune_max_context, cfg.seed, step, index,
                                cfg.train.key_digits);
  ex.inputs.assign(s.tokens.begin(), s.tokens.end() - 1);
  ex.targets.assign(ex.inputs.size(), kIgnoreTarget);
  for (std::size_t i = s.answer_begin; i < s.answer_end; ++i) ex.targets[i - 1] = s.tokens[i];
  return ex;
}

template <class T>
struct TrainState {
  RunConfig config;
  DecoderWeights<T> weights;
  OptimizerState<T> optimizer;

  std::size_t step() const { return optimizer.step; }
};

template <class T>
void reset_optimizer(TrainState<T>& s) {
  std::vector<std::size_t> sizes;
  for (auto& [name, p] : s.weights.named_parameters()) sizes.push_back(p->size());
  s.optimizer.hp = s.config.train.adamw;
  s.optimizer.init(sizes);
}

template <class T>
TrainState<T> init_train_state(const RunConfig& cfg) {
  cfg.validate();
  TrainState<T> s{cfg, init_weights<T>(cfg.model, stream_seed(cfg.seed, SeedStream::kInit), cfg.train.init_std), {}};
  reset_optimizer(s);
  return s;
}

/// One optimizer step. The batch loss is the token-weighted mean over every
/// counted target in the batch; the step number used for the learning rate
/// is 1-based.
template <class T>
StepRecord train_step(TrainState<T>& s) {
  const auto& cfg = s.config;
  const std::size_t step = s.optimizer.step;
  std::vector<Example> batch;
  std::size_t total = 0;
  for (std::size_t i = 0; i < cfg.train.batch_size; ++i) {
    batch.push_back(make_example(cfg, step, i));
    total += batch.back().counted();
  }
  if (total == 0) throw ContractError("train_step: batch has no counted targets");

  s.weights.zero_grad();
  double loss = 0.0;
  for (const auto& ex : batch) {
    const std::size_t n = ex.counted();
    if (n == 0) continue;
    auto l = cross_entropy(forward<T>(ex.inputs, s.weights, cfg.model), ex.targets);
    const double w = static_cast<double>(n) / static_cast<double>(total);
    loss += w * static_cast<double>(l.item());
    backward(scale(l, static_cast<T>(w)));
  }
  if (!std::isfinite(loss)) {
    throw NonFiniteError("non-finite training loss at step " + std::to_string(step + 1));
  }

  auto params = s.weights.named_parameters();
  std::vector<std::span<T>> grads;
  for (auto& [name, p] : params) grads.push_back(p->mutable_grad());
  const double norm = clip_global_norm<T>(grads, cfg.train.adamw.clip_norm);
  if (!std::isfinite(norm)) {
    throw NonFiniteError("non-finite gradient norm at step " + std::to_string(step + 1));
  }

  const std::size_t t = step + 1;
  const double lr = lr_at(cfg.train.schedule, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].second;
    const bool decay = p.rank() >= 2;
    adamw_update<T>(p.mutable_data(), p.grad(), s.optimizer.m[i], s.optimizer.v[i], t, lr, s.optimizer.hp, decay);
  }
  s.optimizer.step = t;
  return {t, loss, norm, lr};
}

// ----------------------------------------------------------------------------
// Checkpoints
//
// Parameters are stored under their own names, optimizer moments under
// "optim.m.<name>" / "optim.v.<name>", and the completed step count as the
// single-element tensor "optim.step".

template <class T>
Checkpoint to_checkpoint(const TrainState<T>& s) {
  Checkpoint ck;
  ck.config_text = format_config(s.config);
  auto params = s.weights.named_parameters();
  auto as_float = [](auto values) { return std::vector<float>(values.begin(), values.end()); };
  for (auto& [name, p] : params) ck.tensors.push_back({name, p->shape(), as_float(p->data())});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    ck.tensors.push_back({"optim.m." + name, p->shape(), as_float(s.optimizer.m[i])});
    ck.tensors.push_back({"optim.v." + name, p->shape(), as_float(s.optimizer.v[i])});
  }
  ck.tensors.push_back({"optim.step", {1}, {static_cast<float>(s.optimizer.step)}});
  return ck;
}

namespace detail {

template <class T>
void copy_into(std::span<T> dst, const NamedTensor& src, const Shape& expected) {
  if (src.shape != expected) {
    throw CheckpointError("tensor '" + src.name + "' has shape " + to_string(src.shape) + ", expected " +
                          to_string(expected));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.values[i]);
}

}  // namespace detail

/// Rebuilds weights (and optimizer state when present and requested) under
/// the checkpoint's own config.
template <class T>
TrainState<T> from_checkpoint(const Checkpoint& ck, bool with_optimizer = true) {
  RunConfig cfg = parse_config(ck.config_text);
  TrainState<T> s{cfg, init_weights<T>(cfg.model, 0), {}};
  reset_optimizer(s);
  auto params = s.weights.named_parameters();
  for (auto& [name, p] : params) detail::copy_into<T>(p->mutable_data(), ck.at(name), p->shape());
  if (with_optimizer && ck.find("optim.step")) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, p] = params[i];
      detail::copy_into<T>(std::span<T>(s.optimizer.m[i]), ck.at("optim.m." + name), p->shape());
      detail::copy_into<T>(std::span<T>(s.optimizer.v[i]), ck.at("optim.v." + name), p->shape());
    }
    s.optimizer.step = static_cast<std::size_t>(ck.at("optim.step").values.at(0));
  }
  return s;
}

/// Starts fine-tuning from pretrained weights: the fine-tuning config replaces
/// the run config, the model shape must match, optimizer state starts fresh.
template <class T>
TrainState<T> start_finetune(const Checkpoint& pretrained, const RunConfig& finetune_cfg) {
  finetune_cfg.validate();
  auto s = from_checkpoint<T>(pretrained, false);
  auto diff = config_diff(s.config, finetune_cfg);
  for (const auto& key : diff) {
    if (key.rfind("model.", 0) == 0) {
      throw ConfigError("finetune: " + key + " differs from the pretrained checkpoint");
    }
  }
  const auto pre_mem = s.config.model.attention.memory_enabled;
  if (pre_mem != finetune_cfg.model.attention.memory_enabled) {
    throw ConfigError("finetune: attention.memory_enabled differs from the pretrained checkpoint");
  }
  s.config = finetune_cfg;
  reset_optimizer(s);
  return s;
}

inline std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07zu.ckpt", step);
  return buf;
}

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.resolved"; }
  std::filesystem::path telemetry() const { return root / "telemetry.csv"; }
  std::filesystem::path alpha() const { return root / "alpha.csv"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path results() const { return root / "results"; }
  std::filesystem::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }
};

/// Runs until `until_step` steps are complete (the config's train.steps when
/// zero). Logs every step, snapshots balance factors every snapshot_every
/// steps and at the end, and checkpoints every checkpoint_every steps and at
/// the end. Returns the step records of this call.
template <class T>
std::vector<StepRecord> run_training(TrainState<T>& s, const RunPaths& paths, std::size_t until_step = 0,
                                     const std::function<void(const StepRecord&)>& on_step = {}) {
  const auto& tc = s.config.train;
  if (until_step == 0) until_step = tc.steps;
  std::filesystem::create_directories(paths.checkpoints());
  {
    std::ofstream cfg(paths.config());
    cfg << format_config(s.config);
  }
  TelemetryWriter tel(paths.telemetry(), paths.alpha());
  std::vector<StepRecord> out;
  while (s.step() < until_step) {
    const auto rec = train_step(s);
    tel.log_step(rec);
    out.push_back(rec);
    if (on_step) on_step(rec);
    const bool last = s.step() == until_step;
    if (last || (tc.snapshot_every && s.step() % tc.snapshot_every == 0)) tel.log_balance(snapshot_balance(s.step(), s.weights));
    if (last || (tc.checkpoint_every && s.step() % tc.checkpoint_every == 0)) {
      const auto ck = to_checkpoint(s);
      save_checkpoint(paths.checkpoints() / checkpoint_name(s.step()), ck);
      if (last) save_checkpoint(paths.final_checkpoint(), ck);
    }
  }
  return out;
}

/// Newest step_*.ckpt in the run's checkpoint directory, or empty.
inline std::filesystem::path latest_checkpoint(const RunPaths& paths) {
  std::filesystem::path best;
  if (!std::filesystem::exists(paths.checkpoints())) return best;
  for (const auto& e : std::filesystem::directory_iterator(paths.checkpoints())) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && e.path().extension() == ".ckpt" && (best.empty() || name > best.filename().string())) {
      best = e.path();
    }
  }
  return best;
}

/// Drops telemetry rows logged after `step` so a resumed run does not
/// duplicate them.
inline void trim_logs_after(const RunPaths& paths, std::size_t step) {
  for (const auto& p : {paths.telemetry(), paths.alpha()}) {
    if (!std::filesystem::exists(p)) continue;
    std::ifstream in(p);
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
      if (header || line.empty() || std::stoul(line.substr(0, line.find(','))) <= step) kept += line + "\n";
      header = false;
    }
    in.close();
    std::ofstream(p, std::ios::trunc) << kept;
  }
}

}  // namespace infini

#endif  // INFINI_TRAIN_HPP_
