// SPDX-License-Identifier: Apache-2.0
//
// Passkey evaluation: greedy decoding, exact-match scoring and the
// (context length x depth) accuracy grid.
//
// Result CSV: context_length,depth,accuracy,n   accuracy in [0, 1]

#ifndef INFINI_EVAL_HPP_
#define INFINI_EVAL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "infini/data.hpp"
#include "infini/model.hpp"
#include "infini/telemetry.hpp"
#include "infini/tensor.hpp"

namespace infini {

/// Next-token logits for a prefix.
using LogitsFn = std::function<std::vector<double>(std::span<const std::int32_t>)>;

/// Lowest index among equal maxima.
inline std::int32_t argmax(std::span<const double> logits) {
  if (logits.empty()) throw ContractError("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<std::int32_t>(best);
}

inline TokenSeq greedy_decode(const LogitsFn& logits, std::span<const std::int32_t> prompt, std::size_t new_tokens) {
  TokenSeq seq(prompt.begin(), prompt.end());
  TokenSeq out;
  for (std::size_t i = 0; i < new_tokens; ++i) {
    auto l = logits(seq);
    const auto tok = argmax(l);
    out.push_back(tok);
    seq.push_back(tok);
  }
  return out;
}

/// Logits of the last position only; the LM head is applied to one row.
template <class T>
std::vector<double> last_logits(std::span<const std::int32_t> tokens, const DecoderWeights<T>& w,
                                const ModelConfig& cfg) {
  if (tokens.empty()) throw ContractError("last_logits: empty token sequence");
  NoGradGuard guard;
  const auto acfg = cfg.resolved_attention();
  auto x = embedding_lookup(w.token_embedding, tokens);
  for (const auto& l : w.layers) x = decoder_layer(x, l, cfg, acfg);
  x = slice(x, 0, tokens.size() - 1, tokens.size());
  x = rmsnorm(x, w.final_norm, static_cast<T>(cfg.norm_eps));
  auto logits = w.lm_head ? matmul(x, w.lm_head) : matmul(x, transpose(w.token_embedding));
  return std::vector<double>(logits.data().begin(), logits.data().end());
}

template <class T>
LogitsFn model_logits(const DecoderWeights<T>& w, const ModelConfig& cfg) {
  return [&w, cfg](std::span<const std::int32_t> tokens) { return last_logits(tokens, w, cfg); };
}

/// Exact match of every answer token.
inline bool score_sample(const LogitsFn& logits, const PasskeySample& s) {
  return greedy_decode(logits, s.prompt(), s.answer.size()) == s.answer;
}

struct GridCell {
  std::size_t context_length = 0;
  double depth = 0.0;
  std::size_t correct = 0;
  std::size_t n = 0;

  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

/// Scores samples and aggregates them per (context_length, depth) cell, in
/// ascending order.
inline std::vector<GridCell> run_grid(const LogitsFn& logits, std::span<const PasskeySample> samples) {
  std::map<std::pair<std::size_t, double>, GridCell> cells;
  for (const auto& s : samples) {
    auto& c = cells[{s.context_length, s.needle_depth}];
    c.context_length = s.context_length;
    c.depth = s.needle_depth;
    c.correct += score_sample(logits, s) ? 1 : 0;
    c.n += 1;
  }
  std::vector<GridCell> out;
  for (auto& [key, c] : cells) out.push_back(c);
  return out;
}

/// Sample-weighted accuracy over cells with context_length in [lo, hi].
inline double mean_accuracy(std::span<const GridCell> cells, std::size_t lo, std::size_t hi) {
  std::size_t correct = 0, n = 0;
  for (const auto& c : cells) {
    if (c.context_length < lo || c.context_length > hi) continue;
    correct += c.correct;
    n += c.n;
  }
  return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

inline std::string grid_csv(std::span<const GridCell> cells) {
  std::ostringstream os;
  os << "context_length,depth,accuracy,n\n";
  for (const auto& c : cells) {
    os << c.context_length << ',' << format_double(c.depth) << ',' << format_double(c.accuracy()) << ',' << c.n << '\n';
  }
  return os.str();
}

inline std::vector<GridCell> parse_grid_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "context_length,depth,accuracy,n") {
    throw std::invalid_argument("grid csv: unexpected header");
  }
  std::vector<GridCell> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto c = detail::split_csv(line);
    if (c.size() != 4) throw std::invalid_argument("grid csv: malformed row '" + line + "'");
    GridCell g;
    g.context_length = std::stoul(c[0]);
    g.depth = detail::parse_double(c[1]);
    g.n = std::stoul(c[3]);
    g.correct = static_cast<std::size_t>(std::llround(detail::parse_double(c[2]) * static_cast<double>(g.n)));
    out.push_back(g);
  }
  return out;
}

inline void write_grid_csv(const std::filesystem::path& path, std::span<const GridCell> cells) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << grid_csv(cells);
}

}  // namespace infini

#endif  // INFINI_EVAL_HPP_
