// SPDX-License-Identifier: Apache-2.0
//
// Rotary position embedding over interleaved (even, odd) feature pairs.

#ifndef INFINI_ROPE_HPP_
#define INFINI_ROPE_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "infini/tensor.hpp"

namespace infini {

/// Rotates pair i of row t by positions[t] / base^(2i/d). Accepts [S, d] or
/// [heads, S, d]; positions has one entry per row of S.
template <class T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, double base) {
  using namespace detail;
  if (x.rank() < 2) throw ShapeError("rope_apply: expected rank >= 2, got " + to_string(x.shape()));
  const std::size_t d = x.dim(-1), s = x.dim(-2);
  if (d % 2 != 0) throw ShapeError("rope_apply: feature dim must be even, got " + std::to_string(d));
  if (positions.size() != s) {
    throw ShapeError("rope_apply: " + std::to_string(positions.size()) + " positions for " + std::to_string(s) + " rows");
  }
  const std::size_t half = d / 2, lead = x.size() / (s * d);
  std::vector<T> cs(s * half), sn(s * half);
  for (std::size_t t = 0; t < s; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(positions[t]) * std::pow(base, -2.0 * double(i) / double(d));
      cs[t * half + i] = static_cast<T>(std::cos(angle));
      sn[t * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  std::vector<T> out(x.size());
  for (std::size_t l = 0; l < lead; ++l) {
    for (std::size_t t = 0; t < s; ++t) {
      const T* in = x.data().data() + (l * s + t) * d;
      T* o = out.data() + (l * s + t) * d;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cs[t * half + i], si = sn[t * half + i];
        o[2 * i] = in[2 * i] * c - in[2 * i + 1] * si;
        o[2 * i + 1] = in[2 * i] * si + in[2 * i + 1] * c;
      }
    }
  }
  auto px = x.node();
  return make_op<T>("rope", x.shape(), std::move(out), {px},
                    [px = px.get(), cs = std::move(cs), sn = std::move(sn), lead, s, d, half](Node<T>& self) {
                      auto& g = px->ensure_grad();
                      for (std::size_t l = 0; l < lead; ++l) {
                        for (std::size_t t = 0; t < s; ++t) {
                          const T* dy = self.grad.data() + (l * s + t) * d;
                          T* dx = g.data() + (l * s + t) * d;
                          for (std::size_t i = 0; i < half; ++i) {
                            const T c = cs[t * half + i], si = sn[t * half + i];
                            dx[2 * i] += dy[2 * i] * c + dy[2 * i + 1] * si;
                            dx[2 * i + 1] += -dy[2 * i] * si + dy[2 * i + 1] * c;
                          }
                        }
                      }
                    });
}

/// Positions 0..n-1.
inline std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

}  // namespace infini

#endif  // INFINI_ROPE_HPP_
