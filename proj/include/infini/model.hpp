// SPDX-License-Identifier: Apache-2.0
//
// LLaMA-style decoder: token embedding, pre-norm blocks of attention and a
// SiLU-gated MLP, final RMSNorm and an LM head.

#ifndef INFINI_MODEL_HPP_
#define INFINI_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "infini/attention.hpp"
#include "infini/tensor.hpp"

namespace infini {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t heads = 4;
  std::size_t kv_heads = 4;
  std::size_t vocab_size = 258;
  std::size_t max_context = 2048;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  bool tie_embeddings = false;
  AttentionConfig attention;

  /// Attention config with the dimensions derived from the model shape.
  AttentionConfig resolved_attention() const {
    AttentionConfig a = attention;
    a.heads = heads;
    a.d_model = d_model;
    a.d_key = heads ? d_model / heads : 0;
    a.d_value = a.d_key;
    a.rope_base = rope_base;
    return a;
  }

  void validate() const {
    if (heads == 0 || kv_heads == 0 || heads % kv_heads != 0) {
      throw ContractError("model: heads (" + std::to_string(heads) + ") must be divisible by kv_heads (" +
                          std::to_string(kv_heads) + ")");
    }
    if (kv_heads != heads) throw ContractError("model: grouped-query attention (kv_heads < heads) is not implemented");
    if (d_model == 0 || d_model % heads != 0) {
      throw ContractError("model: d_model (" + std::to_string(d_model) + ") must be divisible by heads");
    }
    if (vocab_size == 0 || d_ff == 0) throw ContractError("model: vocab_size and d_ff must be positive");
    if (layers > 0) resolved_attention().validate();
  }
};

/// The shape described in the 300M experiments: 12 layers, width 1024,
/// MLP 4096, 8 heads, 49,152-token vocabulary, 8,192-token context, segments
/// of 1,024 tokens, untied embeddings.
inline ModelConfig full_model_config() {
  ModelConfig c;
  c.layers = 12;
  c.d_model = 1024;
  c.d_ff = 4096;
  c.heads = 8;
  c.kv_heads = 8;
  c.vocab_size = 49152;
  c.max_context = 8192;
  c.attention.segment_length = 1024;
  return c;
}

/// Desk-scale shape: 4 layers, width 128, 4 heads, byte vocabulary, 64-token
/// segments.
inline ModelConfig desk_model_config() {
  ModelConfig c;
  c.layers = 4;
  c.d_model = 128;
  c.d_ff = 512;
  c.heads = 4;
  c.kv_heads = 4;
  c.vocab_size = 258;
  c.max_context = 2048;
  c.attention.segment_length = 64;
  return c;
}

template <class T>
struct LayerWeights {
  AttentionWeights<T> attention;
  Tensor<T> attention_norm;  // [d_model]
  Tensor<T> ffn_norm;        // [d_model]
  Tensor<T> w_gate;          // [d_model, d_ff]
  Tensor<T> w_up;            // [d_model, d_ff]
  Tensor<T> w_down;          // [d_ff, d_model]
};

template <class T>
struct DecoderWeights {
  Tensor<T> token_embedding;  // [vocab, d_model]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm;  // [d_model]
  Tensor<T> lm_head;     // [d_model, vocab]; empty when embeddings are tied

  using Named = std::vector<std::pair<std::string, Tensor<T>*>>;

  /// Stable, ordered listing used by the optimizer and checkpoints.
  Named named_parameters() {
    Named out;
    out.emplace_back("tok_embeddings", &token_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& l = layers[i];
      out.emplace_back(p + "attention.wq", &l.attention.wq);
      out.emplace_back(p + "attention.wk", &l.attention.wk);
      out.emplace_back(p + "attention.wv", &l.attention.wv);
      out.emplace_back(p + "attention.wo", &l.attention.wo);
      out.emplace_back(p + "attention.gate", &l.attention.gate.raw);
      out.emplace_back(p + "attention_norm", &l.attention_norm);
      out.emplace_back(p + "ffn_norm", &l.ffn_norm);
      out.emplace_back(p + "feed_forward.w_gate", &l.w_gate);
      out.emplace_back(p + "feed_forward.w_up", &l.w_up);
      out.emplace_back(p + "feed_forward.w_down", &l.w_down);
    }
    out.emplace_back("norm", &final_norm);
    if (lm_head) out.emplace_back("output", &lm_head);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (auto& [n, p] : const_cast<DecoderWeights*>(this)->named_parameters()) out.emplace_back(n, p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : named_parameters()) p->zero_grad();
  }
};

/// Closed-form parameter count from the config alone.
inline std::size_t count_parameters(const ModelConfig& c) {
  const std::size_t d = c.d_model, h = c.heads;
  const std::size_t per_layer = 4 * d * d + h + 2 * d + 3 * d * c.d_ff;
  std::size_t n = c.vocab_size * d + c.layers * per_layer + d;
  if (!c.tie_embeddings) n += d * c.vocab_size;
  return n;
}

namespace detail {

template <class T>
Tensor<T> normal_tensor(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

}  // namespace detail

/// normal(0, 0.02) projections and embeddings, unit norms, gates at
/// attention.balance_init.
template <class T>
DecoderWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed, double stddev = 0.02) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model;
  auto a = cfg.resolved_attention();
  DecoderWeights<T> w;
  w.token_embedding = detail::normal_tensor<T>({cfg.vocab_size, d}, rng, stddev);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    LayerWeights<T> l;
    l.attention.wq = detail::normal_tensor<T>({d, a.heads * a.d_key}, rng, stddev);
    l.attention.wk = detail::normal_tensor<T>({d, a.heads * a.d_key}, rng, stddev);
    l.attention.wv = detail::normal_tensor<T>({d, a.heads * a.d_value}, rng, stddev);
    l.attention.wo = detail::normal_tensor<T>({a.heads * a.d_value, d}, rng, stddev);
    l.attention.gate.raw = Tensor<T>::full({a.heads}, static_cast<T>(a.balance_init), true);
    l.attention_norm = Tensor<T>::full({d}, T(1), true);
    l.ffn_norm = Tensor<T>::full({d}, T(1), true);
    l.w_gate = detail::normal_tensor<T>({d, cfg.d_ff}, rng, stddev);
    l.w_up = detail::normal_tensor<T>({d, cfg.d_ff}, rng, stddev);
    l.w_down = detail::normal_tensor<T>({cfg.d_ff, d}, rng, stddev);
    w.layers.push_back(std::move(l));
  }
  w.final_norm = Tensor<T>::full({d}, T(1), true);
  if (!cfg.tie_embeddings) w.lm_head = detail::normal_tensor<T>({d, cfg.vocab_size}, rng, stddev);
  return w;
}

/// Copies weights into another precision (fresh leaves with requires_grad).
template <class U, class T>
DecoderWeights<U> cast_weights(const DecoderWeights<T>& src) {
  auto conv = [](const Tensor<T>& t) {
    if (!t) return Tensor<U>();
    return Tensor<U>(t.shape(), std::vector<U>(t.data().begin(), t.data().end()), true);
  };
  DecoderWeights<U> w;
  w.token_embedding = conv(src.token_embedding);
  for (const auto& l : src.layers) {
    LayerWeights<U> o;
    o.attention.wq = conv(l.attention.wq);
    o.attention.wk = conv(l.attention.wk);
    o.attention.wv = conv(l.attention.wv);
    o.attention.wo = conv(l.attention.wo);
    o.attention.gate.raw = conv(l.attention.gate.raw);
    o.attention_norm = conv(l.attention_norm);
    o.ffn_norm = conv(l.ffn_norm);
    o.w_gate = conv(l.w_gate);
    o.w_up = conv(l.w_up);
    o.w_down = conv(l.w_down);
    w.layers.push_back(std::move(o));
  }
  w.final_norm = conv(src.final_norm);
  w.lm_head = conv(src.lm_head);
  return w;
}

/// Decoder block: x + attn(norm(x)), then h + mlp(norm(h)).
template <class T>
Tensor<T> decoder_layer(const Tensor<T>& x, const LayerWeights<T>& l, const ModelConfig& cfg,
                        const AttentionConfig& acfg) {
  const T eps = static_cast<T>(cfg.norm_eps);
  auto h = add(x, infini_forward(rmsnorm(x, l.attention_norm, eps), l.attention, acfg));
  auto n = rmsnorm(h, l.ffn_norm, eps);
  auto mlp = matmul(mul(silu(matmul(n, l.w_gate)), matmul(n, l.w_up)), l.w_down);
  return add(h, mlp);
}

/// Logits [T, vocab] for a token sequence.
template <class T>
Tensor<T> forward(std::span<const std::int32_t> tokens, const DecoderWeights<T>& w, const ModelConfig& cfg) {
  if (tokens.empty()) throw ContractError("forward: empty token sequence");
  const auto acfg = cfg.resolved_attention();
  auto x = embedding_lookup(w.token_embedding, tokens);
  for (const auto& l : w.layers) x = decoder_layer(x, l, cfg, acfg);
  x = rmsnorm(x, w.final_norm, static_cast<T>(cfg.norm_eps));
  return w.lm_head ? matmul(x, w.lm_head) : matmul(x, transpose(w.token_embedding));
}

/// Activated balance factors, [layers][heads].
template <class T>
std::vector<std::vector<double>> balance_factors(const DecoderWeights<T>& w) {
  std::vector<std::vector<double>> out;
  for (const auto& l : w.layers) {
    std::vector<double> row;
    for (auto r : l.attention.gate.raw.data()) row.push_back(hard_sigmoid(static_cast<double>(r)));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace infini

#endif  // INFINI_MODEL_HPP_
