// SPDX-License-Identifier: Apache-2.0
//
// Learning-rate schedule, global-norm clipping and AdamW with decoupled
// weight decay.

#ifndef INFINI_OPTIM_HPP_
#define INFINI_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace infini {

/// Linear warmup from 0 to base_lr, then cosine decay to floor_lr at
/// total_steps; floor_lr afterwards.
struct Schedule {
  double base_lr = 6e-5;
  std::size_t warmup_steps = 500;
  std::size_t total_steps = 30000;
  double floor_lr = 6e-6;

  void validate() const {
    if (floor_lr > base_lr) throw std::invalid_argument("schedule: floor_lr exceeds base_lr");
    if (warmup_steps > total_steps) throw std::invalid_argument("schedule: warmup_steps exceeds total_steps");
    if (base_lr < 0.0 || floor_lr < 0.0) throw std::invalid_argument("schedule: negative learning rate");
  }
};

inline double lr_at(const Schedule& s, std::size_t step) {
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (step >= s.total_steps) return s.floor_lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  // Convex form so both endpoints are hit exactly.
  return c * s.base_lr + (1.0 - c) * s.floor_lr;
}

/// Scales every gradient by max_norm / ||g|| when ||g|| > max_norm. Returns
/// the pre-clip global L2 norm.
template <class T>
double clip_global_norm(std::span<const std::span<T>> grads, double max_norm) {
  double ss = 0.0;
  for (auto g : grads) {
    for (T v : g) ss += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto g : grads) {
      for (T& v : g) v *= s;
    }
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
};

/// Moments mirror the parameter list; step counts completed updates.
template <class T>
struct OptimizerState {
  AdamWConfig hp;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void init(std::span<const std::size_t> sizes) {
    m.clear();
    v.clear();
    for (auto n : sizes) {
      m.emplace_back(n, T(0));
      v.emplace_back(n, T(0));
    }
    step = 0;
  }
};

/// One parameter's update for optimizer step t (1-based):
///   theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)
template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t t,
                  double lr, const AdamWConfig& hp, bool decay) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw std::invalid_argument("adamw: buffer sizes do not match the parameter");
  }
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  const double wd = decay ? hp.weight_decay : 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * g;
    const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    double p = static_cast<double>(theta[i]);
    p *= 1.0 - lr * wd;
    p -= lr * mhat / (std::sqrt(vhat) + hp.eps);
    theta[i] = static_cast<T>(p);
  }
}

}  // namespace infini

#endif  // INFINI_OPTIM_HPP_
