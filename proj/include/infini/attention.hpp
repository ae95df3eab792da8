// SPDX-License-Identifier: Apache-2.0
//
// Segmented causal attention with an optional compressive memory.
//
// The sequence is split into segments of `segment_length` tokens. Inside a
// segment, heads run ordinary causal softmax attention with rotary positions.
// When memory is enabled each head also keeps a linear-attention memory
//
//   M += sigma(K)^T V,   N += sigma(K)^T 1,   sigma(x) = ELU(x) + 1
//
// which is read before it is written for every segment:
//
//   A_mem = sigma(Q) M / (sigma(Q) N + eps)
//   A     = alpha * A_mem + (1 - alpha) * A_local
//
// alpha is a per-head hard sigmoid of a trainable scalar. The memory path uses
// the un-rotated Q and K.

#ifndef INFINI_ATTENTION_HPP_
#define INFINI_ATTENTION_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "infini/rope.hpp"
#include "infini/tensor.hpp"

namespace infini {

/// clamp(raw / 6 + 1/2, 0, 1)
inline double hard_sigmoid(double raw) { return std::clamp(raw / 6.0 + 0.5, 0.0, 1.0); }

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t d_key = 32;
  std::size_t d_value = 32;
  std::size_t segment_length = 64;
  bool memory_enabled = true;
  bool causal = true;
  double balance_init = 0.0;
  bool memory_detach = false;
  double epsilon_retrieve = 1e-6;
  double rope_base = 10000.0;

  void validate() const {
    if (heads == 0 || d_key == 0 || d_value == 0) throw ContractError("attention: heads and head dims must be positive");
    if (d_model != heads * d_value) {
      throw ContractError("attention: d_model (" + std::to_string(d_model) + ") must equal heads * d_value (" +
                          std::to_string(heads * d_value) + ")");
    }
    if (segment_length < 1) throw ContractError("attention: segment_length must be >= 1");
    if (!causal) throw ContractError("attention: only causal attention is supported");
    if (!(epsilon_retrieve > 0.0)) throw ContractError("attention: epsilon_retrieve must be > 0");
    if (d_key % 2 != 0) throw ContractError("attention: d_key must be even for rotary positions");
  }
};

template <class T>
struct MemoryState {
  Tensor<T> M;  // [heads, d_key, d_value]
  Tensor<T> N;  // [heads, d_key]

  static MemoryState empty(std::size_t heads, std::size_t d_key, std::size_t d_value) {
    return {Tensor<T>::zeros({heads, d_key, d_value}), Tensor<T>::zeros({heads, d_key})};
  }
};

/// Per-head trainable gate; alpha = hard_sigmoid(raw).
template <class T>
struct BalanceGate {
  Tensor<T> raw;  // [heads]

  Tensor<T> alpha() const { return hard_sigmoid(raw); }
};

template <class T>
struct AttentionWeights {
  Tensor<T> wq;  // [d_model, heads * d_key]
  Tensor<T> wk;  // [d_model, heads * d_key]
  Tensor<T> wv;  // [d_model, heads * d_value]
  Tensor<T> wo;  // [heads * d_value, d_model]
  BalanceGate<T> gate;
};

/// softmax(Q K^T / sqrt(d_key)) V with a causal mask; q, k, v are [heads, S, d].
template <class T>
Tensor<T> local_causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.rank() != 3 || v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1)) {
    throw ShapeError("local_causal_attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " +
                     to_string(v.shape()));
  }
  const T s = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  auto scores = scale(matmul(q, transpose(k)), s);
  return matmul(causal_softmax(scores), v);
}

/// sigma(q) M / (sigma(q) N + eps), rowwise per query position.
template <class T>
Tensor<T> memory_retrieve(const Tensor<T>& q, const MemoryState<T>& mem, T eps) {
  const std::size_t heads = mem.M.dim(0), dk = mem.M.dim(1);
  if (q.rank() != 3 || q.dim(0) != heads || q.dim(2) != dk || mem.N.shape() != Shape{heads, dk}) {
    throw ShapeError("memory_retrieve: query " + to_string(q.shape()) + " vs memory " + to_string(mem.M.shape()));
  }
  auto sq = elu_plus_one(q);
  auto num = matmul(sq, mem.M);
  auto den = matmul(sq, reshape(mem.N, {heads, dk, 1}));
  return div_rows(num, den, eps);
}

/// Returns (M + sigma(k)^T v, N + sigma(k)^T 1). An empty k (zero-length
/// segment) leaves the state unchanged.
template <class T>
MemoryState<T> memory_update(const MemoryState<T>& mem, const Tensor<T>& k, const Tensor<T>& v) {
  if (!k && !v) return mem;
  const std::size_t heads = mem.M.dim(0), dk = mem.M.dim(1), dv = mem.M.dim(2);
  if (!k || !v || k.rank() != 3 || v.rank() != 3 || k.dim(0) != heads || k.dim(2) != dk || v.dim(0) != heads ||
      v.dim(2) != dv || k.dim(1) != v.dim(1)) {
    throw ShapeError("memory_update: keys " + (k ? to_string(k.shape()) : std::string("<empty>")) + ", values " +
                     (v ? to_string(v.shape()) : std::string("<empty>")) + " vs memory " + to_string(mem.M.shape()));
  }
  auto sk = elu_plus_one(k);
  return {add(mem.M, matmul(transpose(sk), v)), add(mem.N, sum_dim(sk, 1))};
}

/// alpha[h] * a_mem[h] + (1 - alpha[h]) * a_local[h]
template <class T>
Tensor<T> combine(const Tensor<T>& a_mem, const Tensor<T>& a_local, const Tensor<T>& alpha) {
  detail::require_same_shape("combine", a_mem, a_local);
  auto keep = sub(Tensor<T>::full(alpha.shape(), T(1)), alpha);
  return add(scale_leading(a_mem, alpha), scale_leading(a_local, keep));
}

template <class T>
Tensor<T> combine(const Tensor<T>& a_mem, const Tensor<T>& a_local, const BalanceGate<T>& gate) {
  return combine(a_mem, a_local, gate.alpha());
}

/// Number of segments a sequence of t tokens is split into.
inline std::size_t segment_count(std::size_t t, std::size_t segment_length) {
  return (t + segment_length - 1) / segment_length;
}

/// Full layer: projections, per-segment local attention and memory, output
/// projection. x is [T, d_model]. Memory starts empty on every call.
template <class T>
Tensor<T> infini_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const AttentionConfig& cfg) {
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) {
    throw ShapeError("infini_forward: input " + to_string(x.shape()) + " vs d_model " + std::to_string(cfg.d_model));
  }
  const std::size_t t = x.dim(0), seg = cfg.segment_length;
  auto q = split_heads(matmul(x, w.wq), cfg.heads);
  auto k = split_heads(matmul(x, w.wk), cfg.heads);
  auto v = split_heads(matmul(x, w.wv), cfg.heads);

  Tensor<T> alpha;
  MemoryState<T> mem;
  if (cfg.memory_enabled) {
    alpha = w.gate.alpha();
    mem = MemoryState<T>::empty(cfg.heads, cfg.d_key, cfg.d_value);
  }
  const T eps = static_cast<T>(cfg.epsilon_retrieve);

  std::vector<Tensor<T>> outs;
  outs.reserve(segment_count(t, seg));
  for (std::size_t begin = 0; begin < t; begin += seg) {
    const std::size_t end = std::min(t, begin + seg);
    const bool whole = begin == 0 && end == t;
    auto qs = whole ? q : slice(q, 1, begin, end);
    auto ks = whole ? k : slice(k, 1, begin, end);
    auto vs = whole ? v : slice(v, 1, begin, end);
    const auto pos = iota_positions(end - begin);
    auto local = local_causal_attention(rope_apply(qs, pos, cfg.rope_base), rope_apply(ks, pos, cfg.rope_base), vs);
    if (cfg.memory_enabled) {
      auto retrieved = memory_retrieve(qs, mem, eps);
      outs.push_back(combine(retrieved, local, alpha));
      if (end < t) {
        mem = memory_update(mem, ks, vs);
        if (cfg.memory_detach) mem = {detach(mem.M), detach(mem.N)};
      }
    } else {
      outs.push_back(local);
    }
  }
  auto a = outs.size() == 1 ? outs.front() : concat(outs, 1);
  return matmul(merge_heads(a), w.wo);
}

/// The same layer with the memory path switched off: independent causal
/// attention per segment.
template <class T>
Tensor<T> segmented_attention(const Tensor<T>& x, const AttentionWeights<T>& w, AttentionConfig cfg) {
  cfg.memory_enabled = false;
  return infini_forward(x, w, cfg);
}

}  // namespace infini

#endif  // INFINI_ATTENTION_HPP_
