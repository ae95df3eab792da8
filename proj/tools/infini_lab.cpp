// SPDX-License-Identifier: Apache-2.0
//
// infini_lab: data generation, training, fine-tuning, passkey evaluation and
// balance-factor analysis for Infini-attention decoders.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "infini/infini.hpp"

namespace fs = std::filesystem;
using namespace infini;

namespace {

struct Common {
  std::string config;
  std::string run_dir = "run";
  long long seed = -1;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_config) {
  c.config = default_config;
  cmd->add_option("--config", c.config, "preset name or config file")->capture_default_str();
  cmd->add_option("--run-dir", c.run_dir, "run directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_flag("--deterministic", c.deterministic, "fixed-order single-threaded kernels (always on)");
  cmd->add_option("--override", c.overrides, "KEY=VALUE, repeatable");
}

RunConfig apply_common(RunConfig cfg, const Common& c) {
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--override expects KEY=VALUE, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (c.deterministic) cfg.deterministic = true;
  cfg.validate();
  return cfg;
}

std::string fields_help() {
  std::string s = "Config fields (--override KEY=VALUE):\n";
  for (const auto& f : config_fields()) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-30s %s\n", f.key.c_str(), f.help.c_str());
    s += buf;
  }
  s += "Presets:";
  for (const auto& p : preset_names()) s += " " + p;
  return s + "\n";
}

void print_step(const StepRecord& r, std::size_t every) {
  if (r.step % every == 0 || r.step == 1) {
    std::printf("step %zu loss %.4f grad_norm %.3f lr %.3g\n", r.step, r.loss, r.grad_norm, r.lr);
    std::fflush(stdout);
  }
}

int cmd_generate(const Common& c, std::size_t finetune_samples) {
  const auto cfg = apply_common(load_config(c.config), c);
  const RunPaths paths{c.run_dir};
  const auto data = paths.root / "data";
  fs::create_directories(data);
  auto spec = cfg.corpus;
  spec.seed = cfg.seed;
  write_corpus((data / "corpus.jsonl").string(), generate_corpus(spec));
  const auto grid = make_eval_grid(cfg.eval.context_lengths, cfg.eval.depths, cfg.eval.samples_per_cell, cfg.seed,
                                   cfg.train.key_digits);
  write_passkey_dataset((data / "passkey_eval.jsonl").string(), grid);
  std::vector<PasskeySample> ft;
  for (std::size_t i = 0; i < finetune_samples; ++i) {
    ft.push_back(make_finetune_sample(cfg.train.finetune_min_context, cfg.train.finetune_max_context, cfg.seed,
                                      i / cfg.train.batch_size, i % cfg.train.batch_size, cfg.train.key_digits));
  }
  write_passkey_dataset((data / "passkey_finetune.jsonl").string(), ft);
  std::printf("wrote %zu documents, %zu eval samples, %zu fine-tuning samples to %s\n", cfg.corpus.num_documents,
              grid.size(), ft.size(), data.string().c_str());
  return 0;
}

int cmd_train(const Common& c, bool resume, std::size_t until, std::size_t print_every) {
  const RunPaths paths{c.run_dir};
  TrainState<float> state;
  const auto ckpt = resume ? latest_checkpoint(paths) : fs::path{};
  if (!ckpt.empty()) {
    state = from_checkpoint<float>(load_checkpoint(ckpt));
    trim_logs_after(paths, state.step());
    std::printf("resumed from %s at step %zu\n", ckpt.string().c_str(), state.step());
  } else {
    state = init_train_state<float>(apply_common(load_config(c.config), c));
  }
  run_training(state, paths, until, [&](const StepRecord& r) { print_step(r, print_every); });
  std::printf("final checkpoint %s\n", paths.final_checkpoint().string().c_str());
  return 0;
}

int cmd_finetune(const Common& c, const std::string& from, std::size_t print_every) {
  const RunPaths paths{c.run_dir};
  const auto pre = load_checkpoint(from);
  const auto pre_cfg = parse_config(pre.config_text);
  RunConfig ft = c.config.empty() ? desk_finetune_config(pre_cfg) : load_config(c.config);
  auto state = start_finetune<float>(pre, apply_common(ft, c));
  run_training(state, paths, 0, [&](const StepRecord& r) { print_step(r, print_every); });
  std::printf("final checkpoint %s\n", paths.final_checkpoint().string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset, std::string out) {
  const auto state = from_checkpoint<float>(load_checkpoint(checkpoint), false);
  const auto cfg = apply_common(state.config, c);
  const auto samples = dataset.empty() ? make_eval_grid(cfg.eval.context_lengths, cfg.eval.depths,
                                                        cfg.eval.samples_per_cell, cfg.seed, cfg.train.key_digits)
                                       : read_passkey_dataset(dataset);
  const auto cells = run_grid(model_logits(state.weights, cfg.model), samples);
  if (out.empty()) out = (RunPaths{c.run_dir}.results() / "passkey.csv").string();
  write_grid_csv(out, cells);
  std::cout << grid_csv(cells);
  return 0;
}

int cmd_analyze(const Common& c, const std::string& checkpoint, std::size_t bins) {
  const RunPaths paths{c.run_dir};
  BalanceSnapshot snap;
  if (!checkpoint.empty()) {
    const auto state = from_checkpoint<float>(load_checkpoint(checkpoint), true);
    snap = snapshot_balance(state.step(), state.weights);
  } else {
    const auto log = read_alpha_log(paths.alpha());
    if (log.empty()) throw std::runtime_error(paths.alpha().string() + " has no snapshots");
    snap = log.back();
  }
  snap.validate();
  std::printf("step %zu mean_alpha %s\n", snap.step, format_double(mean_alpha(snap)).c_str());
  const auto hist = alpha_histogram(snap, bins);
  std::printf("histogram");
  for (auto h : hist) std::printf(" %zu", h);
  std::printf("\n");
  const auto pref = layer_memory_preference(snap);
  for (std::size_t l = 0; l < pref.size(); ++l) std::printf("layer %zu memory_preference %.3f\n", l, pref[l]);
  const auto heatmap = paths.results() / "alpha_heatmap.csv";
  fs::create_directories(paths.results());
  std::ofstream(heatmap) << alpha_heatmap_csv(snap);
  std::printf("heatmap %s\n", heatmap.string().c_str());
  return 0;
}

int cmd_inspect(const std::string& checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  std::size_t params = 0;
  for (const auto& t : ck.tensors) {
    std::printf("%-40s %s\n", t.name.c_str(), to_string(t.shape).c_str());
    if (t.name.rfind("optim.", 0) != 0) params += t.values.size();
  }
  if (const auto* s = ck.find("optim.step")) std::printf("step %.0f\n", static_cast<double>(s->values.at(0)));
  std::printf("parameters %zu\n\n%s", params, ck.config_text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infini-attention training and evaluation"};
  app.footer(fields_help());
  app.require_subcommand(1);

  Common gen_c, train_c, ft_c, eval_c, an_c;
  std::size_t finetune_samples = 1000, until = 0, print_every = 50, bins = 10;
  bool resume = false;
  std::string from, checkpoint, dataset, out;

  auto* gen = app.add_subcommand("generate-data", "write corpus and passkey datasets as JSONL");
  add_common(gen, gen_c, "desk_pretrain");
  gen->add_option("--finetune-samples", finetune_samples, "fine-tuning samples to write")->capture_default_str();

  auto* train = app.add_subcommand("train", "pretrain from scratch or resume");
  add_common(train, train_c, "desk_pretrain");
  train->add_flag("--resume", resume, "continue from the newest checkpoint in the run directory");
  train->add_option("--until-step", until, "stop after this many completed steps (default: train.steps)");
  train->add_option("--print-every", print_every)->capture_default_str();

  auto* ft = app.add_subcommand("finetune", "fine-tune a pretrained checkpoint on passkey data");
  add_common(ft, ft_c, "");
  ft->add_option("--from", from, "pretrained checkpoint")->required();
  ft->add_option("--print-every", print_every)->capture_default_str();

  auto* ev = app.add_subcommand("eval-passkey", "score the passkey grid with greedy decoding");
  add_common(ev, eval_c, "");
  ev->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  ev->add_option("--dataset", dataset, "passkey JSONL (default: regenerate the config's grid)");
  ev->add_option("--out", out, "result CSV (default: <run-dir>/results/passkey.csv)");

  auto* an = app.add_subcommand("analyze-balance", "summarize balance factors");
  add_common(an, an_c, "");
  an->add_option("--checkpoint", checkpoint, "read gates from a checkpoint instead of alpha.csv");
  an->add_option("--bins", bins, "histogram bins")->capture_default_str();

  auto* ins = app.add_subcommand("inspect-checkpoint", "list tensors, step and config");
  ins->add_option("checkpoint", checkpoint)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_c, finetune_samples);
    if (*train) return cmd_train(train_c, resume, until, print_every);
    if (*ft) return cmd_finetune(ft_c, from, print_every);
    if (*ev) return cmd_eval(eval_c, checkpoint, dataset, out);
    if (*an) return cmd_analyze(an_c, checkpoint, bins);
    if (*ins) return cmd_inspect(checkpoint);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
