// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: random tensors, a central finite-difference gradient
// checker and the catalogue of differentiable ops it runs over.

#ifndef INFINI_TESTS_SUPPORT_HPP_
#define INFINI_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "infini/infini.hpp"

namespace infini::testing {

using TD = Tensor<double>;

inline TD random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v), grad);
}

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradStats {
  std::size_t checked = 0;
  std::size_t within = 0;
  double max_rel = 0.0;
};

/// Compares backward() against a fourth-order central difference of
/// `loss(leaves)` for every element of every leaf.
inline GradStats gradcheck(std::vector<TD>& leaves, const std::function<TD()>& loss, double tol, double h = 1e-4) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    analytic.emplace_back(l.size(), 0.0);
    if (l.has_grad()) std::copy(l.grad().begin(), l.grad().end(), analytic.back().begin());
  }
  GradStats st;
  NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x0 = data[i];
      auto at = [&](double x) {
        data[i] = x;
        return loss().item();
      };
      const double numeric = (8.0 * (at(x0 + h) - at(x0 - h)) - (at(x0 + 2 * h) - at(x0 - 2 * h))) / (12.0 * h);
      data[i] = x0;
      const double e = rel_error(analytic[li][i], numeric);
      st.checked += 1;
      st.within += e < tol ? 1 : 0;
      st.max_rel = std::max(st.max_rel, e);
    }
  }
  return st;
}

/// Fixed random projection so each output element gets a distinct weight.
inline TD project(const TD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(mul(y, random_tensor(rng, y.shape(), -1.0, 1.0, false)));
}

struct OpCase {
  std::string name;
  /// Builds leaves from the rng and returns the scalar loss closure.
  std::function<std::function<TD()>(std::mt19937_64&, std::vector<TD>&)> build;
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  auto unary = [&](std::string name, Shape shape, std::function<TD(const TD&)> op, double lo = -1.0, double hi = 1.0) {
    c.push_back({name, [=](std::mt19937_64& rng, std::vector<TD>& L) {
                   L = {random_tensor(rng, shape, lo, hi)};
                   const auto s = rng();
                   return std::function<TD()>([&L, op, s] { return project(op(L[0]), s); });
                 }});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<TD(const TD&, const TD&)> op) {
    c.push_back({name, [=](std::mt19937_64& rng, std::vector<TD>& L) {
                   L = {random_tensor(rng, sa), random_tensor(rng, sb)};
                   const auto s = rng();
                   return std::function<TD()>([&L, op, s] { return project(op(L[0], L[1]), s); });
                 }});
  };
  binary("matmul", {3, 4}, {4, 5}, [](const TD& a, const TD& b) { return matmul(a, b); });
  binary("matmul_batched", {2, 3, 4}, {2, 4, 2}, [](const TD& a, const TD& b) { return matmul(a, b); });
  binary("matmul_broadcast", {2, 3, 4}, {4, 5}, [](const TD& a, const TD& b) { return matmul(a, b); });
  unary("transpose", {2, 3, 4}, [](const TD& x) { return transpose(x); });
  binary("add", {3, 4}, {3, 4}, [](const TD& a, const TD& b) { return add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](const TD& a, const TD& b) { return sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](const TD& a, const TD& b) { return mul(a, b); });
  unary("scale", {3, 4}, [](const TD& x) { return scale(x, 1.7); });
  // Away from the kinks at 0 and +-3.
  unary("elu_plus_one_neg", {3, 4}, [](const TD& x) { return elu_plus_one(x); }, -2.0, -0.1);
  unary("elu_plus_one_pos", {3, 4}, [](const TD& x) { return elu_plus_one(x); }, 0.1, 2.0);
  unary("silu", {3, 4}, [](const TD& x) { return silu(x); }, -3.0, 3.0);
  unary("hard_sigmoid", {6}, [](const TD& x) { return hard_sigmoid(x); }, -2.9, 2.9);
  unary("softmax_lastdim", {2, 3, 5}, [](const TD& x) { return softmax_lastdim(x); }, -2.0, 2.0);
  unary("causal_softmax", {2, 4, 4}, [](const TD& x) { return causal_softmax(x); }, -2.0, 2.0);
  binary("rmsnorm", {3, 6}, {6}, [](const TD& x, const TD& w) { return rmsnorm(x, w, 1e-5); });
  c.push_back({"cross_entropy", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {5, 7}, -2.0, 2.0)};
                 std::vector<std::int32_t> t{3, kIgnoreTarget, 0, 6, 2};
                 return std::function<TD()>([&L, t] { return cross_entropy(L[0], t); });
               }});
  unary("sum", {3, 4}, [](const TD& x) { return sum(x); });
  unary("sum_dim", {2, 3, 4}, [](const TD& x) { return sum_dim(x, 1); });
  unary("reshape", {2, 6}, [](const TD& x) { return reshape(x, {3, 4}); });
  unary("slice", {3, 5, 2}, [](const TD& x) { return slice(x, 1, 1, 4); });
  binary("concat", {2, 3, 2}, {2, 1, 2}, [](const TD& a, const TD& b) { return concat(std::vector<TD>{a, b}, 1); });
  c.push_back({"embedding_lookup", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {6, 3})};
                 const auto s = rng();
                 std::vector<std::int32_t> ids{1, 4, 1, 0, 5};
                 return std::function<TD()>([&L, ids, s] { return project(embedding_lookup(L[0], ids), s); });
               }});
  unary("split_heads", {3, 6}, [](const TD& x) { return split_heads(x, 2); });
  unary("merge_heads", {2, 3, 4}, [](const TD& x) { return merge_heads(x); });
  binary("scale_leading", {3, 2, 2}, {3}, [](const TD& x, const TD& w) { return scale_leading(x, w); });
  c.push_back({"div_rows", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3, 1}, 0.5, 2.0)};
                 const auto s = rng();
                 return std::function<TD()>([&L, s] { return project(div_rows(L[0], L[1], 1e-6), s); });
               }});
  c.push_back({"rope_apply", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {2, 5, 4})};
                 const auto s = rng();
                 return std::function<TD()>([&L, s] {
                   std::vector<std::size_t> pos{0, 1, 2, 3, 4};
                   return project(rope_apply(L[0], pos, 10000.0), s);
                 });
               }});
  c.push_back({"local_causal_attention", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {2, 4, 3}), random_tensor(rng, {2, 4, 3}), random_tensor(rng, {2, 4, 3})};
                 const auto s = rng();
                 return std::function<TD()>([&L, s] { return project(local_causal_attention(L[0], L[1], L[2]), s); });
               }});
  c.push_back({"memory_update_retrieve", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3, 3}),
                      random_tensor(rng, {2, 2, 4})};
                 const auto s = rng();
                 return std::function<TD()>([&L, s] {
                   auto mem = memory_update(MemoryState<double>::empty(2, 4, 3), L[0], L[2]);
                   mem = memory_update(mem, L[1], L[2]);
                   return project(memory_retrieve(L[3], mem, 1e-6), s);
                 });
               }});
  c.push_back({"combine", [](std::mt19937_64& rng, std::vector<TD>& L) {
                 L = {random_tensor(rng, {2, 3, 2}), random_tensor(rng, {2, 3, 2}), random_tensor(rng, {2}, 0.1, 0.9)};
                 const auto s = rng();
                 return std::function<TD()>([&L, s] { return project(combine(L[0], L[1], L[2]), s); });
               }});
  return c;
}

/// Small model for whole-network checks (well under 10k parameters).
inline ModelConfig tiny_model_config(bool memory = true) {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.kv_heads = 2;
  c.vocab_size = 32;
  c.max_context = 64;
  c.attention.segment_length = 4;
  c.attention.memory_enabled = memory;
  return c;
}

inline TokenSeq random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<std::int32_t> d(0, static_cast<std::int32_t>(vocab) - 1);
  TokenSeq t(n);
  for (auto& x : t) x = d(rng);
  return t;
}

/// Sets every gate raw to a random value inside the linear region of the
/// hard sigmoid.
template <class T>
void randomize_gates(DecoderWeights<T>& w, std::mt19937_64& rng, double lo = -2.5, double hi = 2.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& l : w.layers) {
    for (auto& r : l.attention.gate.raw.mutable_data()) r = static_cast<T>(u(rng));
  }
}

}  // namespace infini::testing

#endif  // INFINI_TESTS_SUPPORT_HPP_
