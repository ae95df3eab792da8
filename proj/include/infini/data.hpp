// SPDX-License-Identifier: Apache-2.0
//
// Byte-level tokenizer, synthetic pretraining corpus and passkey
// (needle-in-a-haystack) samples.

#ifndef INFINI_DATA_HPP_
#define INFINI_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "infini/tensor.hpp"

namespace infini {

using TokenSeq = std::vector<std::int32_t>;

// ----------------------------------------------------------------------------
// Tokenizer

inline constexpr std::int32_t kBosToken = 256;
inline constexpr std::int32_t kEosToken = 257;
inline constexpr std::size_t kByteVocabSize = 258;

inline TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<std::int32_t>(c));
  return out;
}

/// Bytes back to text; special tokens are dropped.
inline std::string detokenize(std::span<const std::int32_t> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (auto t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Seed streams

/// splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(mix_seed(seed) ^ stream) ^ a) ^ b);
}

/// Stream tags; samples drawn from different streams never share a seed path.
enum class SeedStream : std::uint64_t {
  kInit = 0x494e4954,
  kCorpus = 0x434f5250,
  kPretrainBatch = 0x50524554,
  kFinetune = 0x46494e45,
  kEval = 0x4556414c,
};

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_seed(seed, static_cast<std::uint64_t>(s), a, b);
}

// ----------------------------------------------------------------------------
// Passkey samples

/// Distractor text. Contains no digits and never mentions the key.
inline constexpr std::string_view kFillerText =
    "The grass is green. The sky is blue. The sun is yellow. Here we go. There and back again. ";
inline constexpr std::string_view kNeedlePrefix = "The pass key is ";
inline constexpr std::string_view kNeedleSuffix = ". ";
inline constexpr std::string_view kQueryText = "What is the pass key? The pass key is ";

struct PasskeySample {
  TokenSeq tokens;  // haystack with needle, query, answer
  double needle_depth = 0.0;
  std::size_t context_length = 0;
  TokenSeq answer;
  std::size_t answer_begin = 0;  // [answer_begin, answer_end) in tokens
  std::size_t answer_end = 0;
  std::size_t needle_begin = 0;

  /// Everything before the answer; what a model is asked to continue.
  std::span<const std::int32_t> prompt() const { return std::span(tokens).first(answer_begin); }
};

inline std::size_t needle_length(std::size_t key_digits) {
  return kNeedlePrefix.size() + key_digits + kNeedleSuffix.size();
}

/// Shortest context that can hold the needle and still be followed by the query.
inline std::size_t min_context_length(std::size_t key_digits) {
  return needle_length(key_digits) + kQueryText.size();
}

/// Haystack of exactly context_length tokens with the needle starting at
/// floor(depth * (context_length - needle_length)), then the query and the
/// answer digits.
inline PasskeySample make_passkey_sample(std::size_t context_length, double depth, std::size_t key_digits,
                                         std::uint64_t seed) {
  if (!(depth >= 0.0 && depth <= 1.0)) throw std::invalid_argument("passkey: depth must lie in [0, 1]");
  if (key_digits == 0) throw std::invalid_argument("passkey: key needs at least one digit");
  if (context_length < min_context_length(key_digits)) {
    throw std::invalid_argument("passkey: context " + std::to_string(context_length) + " is shorter than needle + query (" +
                                std::to_string(min_context_length(key_digits)) + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> digit(0, 9);
  std::string key;
  for (std::size_t i = 0; i < key_digits; ++i) key.push_back(static_cast<char>('0' + digit(rng)));

  const std::string needle = std::string(kNeedlePrefix) + key + std::string(kNeedleSuffix);
  const std::size_t hay = context_length - needle.size();
  const auto start = static_cast<std::size_t>(std::floor(depth * static_cast<double>(hay)));
  const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, kFillerText.size() - 1)(rng);
  std::string filler;
  filler.reserve(hay + kFillerText.size() * 2);
  while (filler.size() < offset + hay) filler += kFillerText;
  filler = filler.substr(offset, hay);

  std::string text = filler.substr(0, start) + needle + filler.substr(start);
  text += kQueryText;

  PasskeySample s;
  s.tokens = tokenize(text);
  s.needle_depth = depth;
  s.context_length = context_length;
  s.needle_begin = start;
  s.answer = tokenize(key);
  s.answer_begin = s.tokens.size();
  s.tokens.insert(s.tokens.end(), s.answer.begin(), s.answer.end());
  s.answer_end = s.tokens.size();
  return s;
}

inline std::vector<double> ten_percent_depths() {
  std::vector<double> d;
  for (int i = 0; i <= 10; ++i) d.push_back(i / 10.0);
  return d;
}

inline std::vector<double> table_depths() { return {0.0, 0.25, 0.5, 0.75, 1.0}; }

inline std::vector<std::size_t> full_grid_lengths() { return {1024, 2048, 4096, 8192, 16384, 32768}; }

/// {1, 2, 4, 8, 16} x segment_length.
inline std::vector<std::size_t> desk_grid_lengths(std::size_t segment_length = 64) {
  std::vector<std::size_t> out;
  for (std::size_t m : {1, 2, 4, 8, 16}) out.push_back(m * segment_length);
  return out;
}

/// Cells ordered by (context, depth); each sample has its own derived seed
/// in the evaluation stream.
inline std::vector<PasskeySample> make_eval_grid(std::span<const std::size_t> context_lengths,
                                                 std::span<const double> depths, std::size_t samples_per_cell,
                                                 std::uint64_t seed, std::size_t key_digits = 5) {
  std::vector<PasskeySample> out;
  out.reserve(context_lengths.size() * depths.size() * samples_per_cell);
  for (std::size_t c = 0; c < context_lengths.size(); ++c) {
    for (std::size_t d = 0; d < depths.size(); ++d) {
      const std::uint64_t cell = c * depths.size() + d;
      for (std::size_t i = 0; i < samples_per_cell; ++i) {
        out.push_back(make_passkey_sample(context_lengths[c], depths[d], key_digits,
                                          stream_seed(seed, SeedStream::kEval, cell, i)));
      }
    }
  }
  return out;
}

/// One fine-tuning sample: context uniform in [min_context, max_context],
/// depth on the 10% lattice, drawn from the fine-tuning stream.
inline PasskeySample make_finetune_sample(std::size_t min_context, std::size_t max_context, std::uint64_t seed,
                                          std::uint64_t step, std::uint64_t index, std::size_t key_digits = 5) {
  std::mt19937_64 rng(stream_seed(seed, SeedStream::kFinetune, step, index));
  const std::size_t ctx = std::uniform_int_distribution<std::size_t>(min_context, max_context)(rng);
  const double depth = std::uniform_int_distribution<int>(0, 10)(rng) / 10.0;
  return make_passkey_sample(ctx, depth, key_digits, rng());
}

// ----------------------------------------------------------------------------
// Synthetic corpus

struct CorpusSpec {
  std::size_t num_documents = 1000;
  double median_length = 40.0;  // tokens, including BOS/EOS
  double mean_length = 42.0;
  double recall_fraction = 0.3;  // documents that state a key and later ask for it
  double copy_fraction = 0.3;    // documents that repeat a random string
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr std::string_view kWords[] = {
    "the",  "a",     "cat",   "dog",   "sat",   "ran",   "on",   "under", "big",  "small", "red",  "blue",
    "green", "house", "tree",  "river", "stone", "bird",  "fish", "moon",  "sun",  "sky",   "and",  "then",
    "of",   "to",    "is",    "was",   "old",   "new",   "far",  "near",  "door", "hill",  "road", "light"};

inline std::string word_text(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kWords) - 1);
  std::string s;
  while (s.size() < n) {
    s += kWords[pick(rng)];
    s += ' ';
  }
  return s;
}

inline std::string random_digits(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> d(0, 9);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + d(rng)));
  return s;
}

}  // namespace detail

/// Lognormal length parameters (mu, sigma) matching the median and mean.
inline std::pair<double, double> lognormal_params(double median, double mean) {
  if (!(median > 0.0) || mean < median) throw std::invalid_argument("corpus: need 0 < median <= mean");
  return {std::log(median), std::sqrt(2.0 * std::log(mean / median))};
}

/// One document of exactly `length` tokens (BOS ... EOS), length >= 2.
inline TokenSeq make_document(std::mt19937_64& rng, std::size_t length, double recall_fraction, double copy_fraction) {
  length = std::max<std::size_t>(length, 2);
  const std::size_t body = length - 2;
  const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::string text;
  if (r < recall_fraction) {
    const std::string key = detail::random_digits(rng, 5);
    const std::string head = std::string(kNeedlePrefix) + key + std::string(kNeedleSuffix);
    const std::string tail = std::string(kNeedlePrefix) + key + ".";
    if (body >= head.size() + tail.size()) {
      text = head + detail::word_text(rng, body - head.size() - tail.size()).substr(0, body - head.size() - tail.size()) +
             tail;
    }
  } else if (r < recall_fraction + copy_fraction) {
    static constexpr std::string_view alnum = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::uniform_int_distribution<std::size_t> pick(0, alnum.size() - 1);
    std::string key;
    const std::size_t klen = std::uniform_int_distribution<std::size_t>(4, 10)(rng);
    for (std::size_t i = 0; i < klen; ++i) key.push_back(alnum[pick(rng)]);
    const std::string head = "copy " + key + " ";
    const std::string tail = "again " + key + ".";
    if (body >= head.size() + tail.size()) {
      text = head + detail::word_text(rng, body - head.size() - tail.size()).substr(0, body - head.size() - tail.size()) +
             tail;
    }
  }
  if (text.empty()) text = detail::word_text(rng, body).substr(0, body);
  TokenSeq doc;
  doc.reserve(length);
  doc.push_back(kBosToken);
  for (auto t : tokenize(text)) doc.push_back(t);
  doc.push_back(kEosToken);
  return doc;
}

inline std::vector<TokenSeq> generate_corpus(const CorpusSpec& spec) {
  auto [mu, sigma] = lognormal_params(spec.median_length, spec.mean_length);
  std::mt19937_64 rng(stream_seed(spec.seed, SeedStream::kCorpus));
  std::lognormal_distribution<double> len(mu, sigma);
  std::vector<TokenSeq> docs;
  docs.reserve(spec.num_documents);
  for (std::size_t i = 0; i < spec.num_documents; ++i) {
    const auto n = static_cast<std::size_t>(std::llround(len(rng)));
    docs.push_back(make_document(rng, n, spec.recall_fraction, spec.copy_fraction));
  }
  return docs;
}

/// Packs freshly generated documents back to back (no cross-document masking)
/// and truncates to `length` tokens. Deterministic in (spec, seed, index).
inline TokenSeq packed_sequence(const CorpusSpec& spec, std::size_t length, std::uint64_t seed, std::uint64_t step,
                                std::uint64_t index) {
  auto [mu, sigma] = lognormal_params(spec.median_length, spec.mean_length);
  std::mt19937_64 rng(stream_seed(seed, SeedStream::kPretrainBatch, step, index));
  std::lognormal_distribution<double> len(mu, sigma);
  TokenSeq out;
  out.reserve(length + 256);
  while (out.size() < length) {
    const auto n = static_cast<std::size_t>(std::llround(len(rng)));
    auto doc = make_document(rng, n, spec.recall_fraction, spec.copy_fraction);
    out.insert(out.end(), doc.begin(), doc.end());
  }
  out.resize(length);
  return out;
}

// ----------------------------------------------------------------------------
// Dataset files: one JSON object per line.
//
//   passkey: {"tokens":[...],"depth":0.5,"context_length":128,
//             "answer":[...],"answer_span":[begin,end]}
//   corpus:  {"tokens":[...]}

inline nlohmann::json to_json(const PasskeySample& s) {
  return nlohmann::json{{"tokens", s.tokens},
                        {"depth", s.needle_depth},
                        {"context_length", s.context_length},
                        {"answer", s.answer},
                        {"answer_span", {s.answer_begin, s.answer_end}}};
}

inline PasskeySample passkey_from_json(const nlohmann::json& j) {
  PasskeySample s;
  s.tokens = j.at("tokens").get<TokenSeq>();
  s.needle_depth = j.at("depth").get<double>();
  s.context_length = j.at("context_length").get<std::size_t>();
  s.answer = j.at("answer").get<TokenSeq>();
  const auto span = j.at("answer_span");
  s.answer_begin = span.at(0).get<std::size_t>();
  s.answer_end = span.at(1).get<std::size_t>();
  if (s.answer_end > s.tokens.size() || s.answer_begin > s.answer_end ||
      s.answer_end - s.answer_begin != s.answer.size()) {
    throw std::runtime_error("passkey record: answer_span inconsistent with tokens/answer");
  }
  return s;
}

inline void write_passkey_dataset(const std::string& path, std::span<const PasskeySample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline std::vector<PasskeySample> read_passkey_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<PasskeySample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(passkey_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_corpus(const std::string& path, std::span<const TokenSeq> docs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& d : docs) out << nlohmann::json{{"tokens", d}}.dump() << '\n';
}

inline std::vector<TokenSeq> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).at("tokens").get<TokenSeq>());
  }
  return out;
}

}  // namespace infini

#endif  // INFINI_DATA_HPP_
