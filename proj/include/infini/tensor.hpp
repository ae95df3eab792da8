// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with a reverse-mode autodiff tape.
//
// Every op that has at least one input with requires_grad records a node
// holding its parents and a backward rule. Nodes carry a monotonically
// increasing sequence number, which is the recording order of the tape:
// backward() replays the reachable nodes in reverse sequence order.

#ifndef INFINI_TENSOR_HPP_
#define INFINI_TENSOR_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace infini {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Op-boundary NaN/Inf detection. On by default in builds without NDEBUG.
inline std::atomic<bool>& finite_checks() {
#ifdef NDEBUG
  static std::atomic<bool> enabled{false};
#else
  static std::atomic<bool> enabled{true};
#endif
  return enabled;
}

namespace detail {

inline thread_local bool grad_enabled = true;

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::ptrdiff_t i) const {
    auto r = static_cast<std::ptrdiff_t>(rank());
    return node_->shape.at(static_cast<std::size_t>(i < 0 ? r + i : i));
  }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Only meaningful on leaves (parameters); ops never observe later writes.
  std::span<T> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

namespace detail {

template <class T>
void check_finite(const Node<T>& n) {
  if (!finite_checks().load(std::memory_order_relaxed)) return;
  for (auto v : n.data) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string("non-finite value produced by op '") + n.op + "' with shape " +
                           to_string(n.shape));
    }
  }
}

/// Builds an op result. The backward rule reads out.grad and accumulates into
/// the parents' grad buffers (allocated on demand).
template <class T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> data,
                  std::vector<std::shared_ptr<Node<T>>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = name;
  n->seq = next_seq();
  bool needs = false;
  if (grad_enabled) {
    for (auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  check_finite(*n);
  return Tensor<T>(std::move(n));
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline std::size_t batch_count(const Shape& s) {
  std::size_t b = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) b *= s[i];
  return b;
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every reachable requires_grad leaf.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss ? to_string(loss.shape()) : std::string("<empty>")));
  }
  using N = detail::Node<T>;
  auto root = loss.node();
  if (!root->requires_grad) throw ContractError("backward() on a loss that is not connected to the tape");

  std::vector<std::pair<std::uint64_t, N*>> all;
  {
    std::vector<N*> work{root.get()};
    std::vector<std::uint64_t> visited;
    while (!work.empty()) {
      N* n = work.back();
      work.pop_back();
      auto it = std::lower_bound(visited.begin(), visited.end(), n->seq);
      if (it != visited.end() && *it == n->seq) continue;
      visited.insert(it, n->seq);
      all.emplace_back(n->seq, n);
      for (auto& p : n->parents) {
        if (p->requires_grad) work.push_back(p.get());
      }
    }
  }
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (auto& [s, n] : all) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  root->ensure_grad()[0] += T(1);
  for (auto& [s, n] : all) {
    if (!n->is_leaf()) n->backward(*n);
  }
  // Intermediate grads are not part of the contract; release them.
  for (auto& [s, n] : all) {
    if (!n->is_leaf()) std::vector<T>().swap(n->grad);
  }
}

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), false);
}

// ----------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product. Batch extents must match, or one side must be a
/// plain matrix that is broadcast across the other's batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) throw mismatch();
  const std::size_t ba = batch_count(a.shape()), bb = batch_count(b.shape());
  Shape out_shape;
  if (a.rank() == b.rank()) {
    if (!std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) throw mismatch();
    out_shape = Shape(a.shape().begin(), a.shape().end() - 2);
  } else if (b.rank() == 2) {
    out_shape = Shape(a.shape().begin(), a.shape().end() - 2);
  } else if (a.rank() == 2) {
    out_shape = Shape(b.shape().begin(), b.shape().end() - 2);
  } else {
    throw mismatch();
  }
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t batches = std::max(ba, bb);
  const std::size_t sa = (ba == 1 && batches > 1) ? 0 : m * k;
  const std::size_t sb = (bb == 1 && batches > 1) ? 0 : k * n;

  std::vector<T> out(batches * m * n);
  for (std::size_t i = 0; i < batches; ++i) {
    ConstMatMap<T> A(a.data().data() + i * sa, m, k);
    ConstMatMap<T> B(b.data().data() + i * sb, k, n);
    MatMap<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  auto pa = a.node(), pb = b.node();
  return make_op<T>("matmul", std::move(out_shape), std::move(out), {pa, pb},
                    [pa = pa.get(), pb = pb.get(), batches, m, k, n, sa, sb](Node<T>& self) {
                      for (std::size_t i = 0; i < batches; ++i) {
                        ConstMatMap<T> dC(self.grad.data() + i * m * n, m, n);
                        if (pa->requires_grad) {
                          ConstMatMap<T> B(pb->data.data() + i * sb, k, n);
                          MatMap<T> dA(pa->ensure_grad().data() + i * sa, m, k);
                          dA.noalias() += dC * B.transpose();
                        }
                        if (pb->requires_grad) {
                          ConstMatMap<T> A(pa->data.data() + i * sa, m, k);
                          MatMap<T> dB(pb->ensure_grad().data() + i * sb, k, n);
                          dB.noalias() += A.transpose() * dC;
                        }
                      }
                    });
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  using namespace detail;
  if (x.rank() < 2) throw ShapeError("transpose: rank < 2 for shape " + to_string(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1), batches = batch_count(x.shape());
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < batches; ++b) {
    MatMap<T>(out.data() + b * r * c, c, r) = ConstMatMap<T>(x.data().data() + b * r * c, r, c).transpose();
  }
  auto px = x.node();
  return make_op<T>("transpose", std::move(s), std::move(out), {px}, [px = px.get(), r, c, batches](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t b = 0; b < batches; ++b) {
      MatMap<T>(g.data() + b * r * c, r, c) += ConstMatMap<T>(self.grad.data() + b * r * c, c, r).transpose();
    }
  });
}

// ----------------------------------------------------------------------------
// Elementwise

namespace detail {

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>("add", a.shape(), std::move(out), {pa, pb}, [pa = pa.get(), pb = pb.get()](Node<T>& self) {
    for (auto* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>("sub", a.shape(), std::move(out), {pa, pb}, [pa = pa.get(), pb = pb.get()](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>("mul", a.shape(), std::move(out), {pa, pb}, [pa = pa.get(), pb = pb.get()](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  using namespace detail;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  auto px = x.node();
  return make_op<T>("scale", x.shape(), std::move(out), {px}, [px = px.get(), c](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

/// sigma(x) = x + 1 for x >= 0, exp(x) otherwise. Strictly positive.
template <class T>
Tensor<T> elu_plus_one(const Tensor<T>& x) {
  using namespace detail;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= T(0) ? x[i] + T(1) : std::exp(x[i]);
  auto px = x.node();
  return make_op<T>("elu_plus_one", x.shape(), std::move(out), {px}, [px = px.get()](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (px->data[i] >= T(0) ? T(1) : self.data[i]);
    }
  });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  using namespace detail;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  auto px = x.node();
  return make_op<T>("silu", x.shape(), std::move(out), {px}, [px = px.get()](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = px->data[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

/// clamp(x/6 + 1/2, 0, 1), elementwise.
template <class T>
Tensor<T> hard_sigmoid(const Tensor<T>& x) {
  using namespace detail;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] / T(6) + T(0.5), T(0), T(1));
  auto px = x.node();
  return make_op<T>("hard_sigmoid", x.shape(), std::move(out), {px}, [px = px.get()](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = px->data[i];
      if (v > T(-3) && v < T(3)) g[i] += self.grad[i] / T(6);
    }
  });
}

// ----------------------------------------------------------------------------
// Normalization and softmax

namespace detail {

template <class T>
Tensor<T> softmax_impl(const Tensor<T>& x, bool causal) {
  if (x.rank() < 1) throw ShapeError("softmax: rank 0 input");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.size() / n;
  std::size_t square = 0;
  if (causal) {
    if (x.rank() < 2 || x.dim(-2) != n) throw ShapeError("causal softmax needs square trailing dims, got " + to_string(x.shape()));
    square = n;
  }
  std::vector<T> out(x.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * n;
    T* o = out.data() + r * n;
    const std::size_t len = causal ? (r % square) + 1 : n;
    T mx = in[0];
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (std::size_t j = 0; j < len; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < len; ++j) o[j] *= inv;
  }
  auto px = x.node();
  return make_op<T>(causal ? "causal_softmax" : "softmax", x.shape(), std::move(out), {px},
                    [px = px.get(), n, rows, causal, square](Node<T>& self) {
                      auto& g = px->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T* y = self.data.data() + r * n;
                        const T* dy = self.grad.data() + r * n;
                        T* dx = g.data() + r * n;
                        const std::size_t len = causal ? (r % square) + 1 : n;
                        T dot = 0;
                        for (std::size_t j = 0; j < len; ++j) dot += y[j] * dy[j];
                        for (std::size_t j = 0; j < len; ++j) dx[j] += y[j] * (dy[j] - dot);
                      }
                    });
}

}  // namespace detail

/// Max-subtracted softmax over the last axis.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  return detail::softmax_impl(x, false);
}

/// Softmax over the last axis restricted to columns j <= i for row i of each
/// trailing square block; masked entries are exactly zero.
template <class T>
Tensor<T> causal_softmax(const Tensor<T>& x) {
  return detail::softmax_impl(x, true);
}

/// x / sqrt(mean(x^2) + eps) * weight over the last axis.
template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  using namespace detail;
  const std::size_t d = x.dim(-1);
  if (weight.rank() != 1 || weight.dim(0) != d) {
    throw ShapeError("rmsnorm: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  std::vector<T> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += in[j] * in[j];
    const T ir = T(1) / std::sqrt(ss / T(d) + eps);
    inv_rms[r] = ir;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[j] * ir * weight[j];
  }
  auto px = x.node(), pw = weight.node();
  return make_op<T>("rmsnorm", x.shape(), std::move(out), {px, pw},
                    [px = px.get(), pw = pw.get(), d, rows, inv_rms = std::move(inv_rms)](Node<T>& self) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T* in = px->data.data() + r * d;
                        const T* dy = self.grad.data() + r * d;
                        const T ir = inv_rms[r];
                        if (pw->requires_grad) {
                          auto& gw = pw->ensure_grad();
                          for (std::size_t j = 0; j < d; ++j) gw[j] += dy[j] * in[j] * ir;
                        }
                        if (px->requires_grad) {
                          auto& gx = px->ensure_grad();
                          T dot = 0;
                          for (std::size_t j = 0; j < d; ++j) dot += dy[j] * pw->data[j] * in[j];
                          const T c = ir * ir * ir * dot / T(d);
                          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += ir * dy[j] * pw->data[j] - c * in[j];
                        }
                      }
                    });
}

// ----------------------------------------------------------------------------
// Losses and reductions

/// Mean negative log-likelihood over positions whose target is not
/// kIgnoreTarget. With no unmasked positions the loss is 0.
inline constexpr std::int32_t kIgnoreTarget = -1;

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  using namespace detail;
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
    ++count;
  }
  std::vector<T> probs(logits.size(), T(0));
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnoreTarget) continue;
    const T* in = logits.data().data() + r * vocab;
    T mx = *std::max_element(in, in + vocab);
    T sum = 0;
    for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(in[j] - mx);
    const T lse = mx + std::log(sum);
    total += lse - in[targets[r]];
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(in[j] - lse);
  }
  const T denom = count ? T(count) : T(1);
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  auto pl = logits.node();
  return make_op<T>("cross_entropy", {1}, {total / denom}, {pl},
                    [pl = pl.get(), probs = std::move(probs), tg = std::move(tg), rows, vocab, denom](Node<T>& self) {
                      auto& g = pl->ensure_grad();
                      const T s = self.grad[0] / denom;
                      for (std::size_t r = 0; r < rows; ++r) {
                        if (tg[r] == kIgnoreTarget) continue;
                        for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += s * probs[r * vocab + j];
                        g[r * vocab + static_cast<std::size_t>(tg[r])] -= s;
                      }
                    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  using namespace detail;
  T s = 0;
  for (auto v : x.data()) s += v;
  auto px = x.node();
  return make_op<T>("sum", {1}, {s}, {px}, [px = px.get()](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// Sums out one axis.
template <class T>
Tensor<T> sum_dim(const Tensor<T>& x, std::size_t axis) {
  using namespace detail;
  if (axis >= x.rank()) throw ShapeError("sum_dim: axis out of range for " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  auto px = x.node();
  return make_op<T>("sum_dim", std::move(s), std::move(out), {px}, [px = px.get(), outer, inner, len](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

// ----------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  using namespace detail;
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto px = x.node();
  return make_op<T>("reshape", std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {px},
                    [px = px.get()](Node<T>& self) {
                      auto& g = px->ensure_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                    });
}

/// Half-open range [begin, end) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  using namespace detail;
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis), n = end - begin;
  Shape s = x.shape();
  s[axis] = n;
  std::vector<T> out(outer * n * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + (o * len + begin) * inner, n * inner, out.data() + o * n * inner);
  }
  auto px = x.node();
  return make_op<T>("slice", std::move(s), std::move(out), {px},
                    [px = px.get(), outer, inner, len, begin, n](Node<T>& self) {
                      auto& g = px->ensure_grad();
                      for (std::size_t o = 0; o < outer; ++o) {
                        T* dst = g.data() + (o * len + begin) * inner;
                        const T* src = self.grad.data() + o * n * inner;
                        for (std::size_t i = 0; i < n * inner; ++i) dst[i] += src[i];
                      }
                    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  using namespace detail;
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(ref));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Shape s = ref;
  s[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::vector<std::size_t> lens;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    }
    off += len;
    nodes.push_back(p.node());
    lens.push_back(len);
  }
  std::vector<Node<T>*> raw;
  for (auto& n : nodes) raw.push_back(n.get());
  return make_op<T>("concat", std::move(s), std::move(out), std::move(nodes),
                    [raw = std::move(raw), lens = std::move(lens), outer, inner, total](Node<T>& self) {
                      std::size_t off = 0;
                      for (std::size_t k = 0; k < raw.size(); ++k) {
                        const std::size_t len = lens[k];
                        if (raw[k]->requires_grad) {
                          auto& g = raw[k]->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* src = self.grad.data() + (o * total + off) * inner;
                            T* dst = g.data() + o * len * inner;
                            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                          }
                        }
                        off += len;
                      }
                    });
}

/// Rows of table[vocab, d] selected by ids, giving [len(ids), d].
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  using namespace detail;
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + to_string(table.shape()));
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  auto pt = table.node();
  return make_op<T>("embedding_lookup", {ids.size(), d}, std::move(out), {pt},
                    [pt = pt.get(), idv = std::move(idv), d](Node<T>& self) {
                      auto& g = pt->ensure_grad();
                      for (std::size_t i = 0; i < idv.size(); ++i) {
                        T* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
                      }
                    });
}

/// [T, heads*d] -> [heads, T, d]
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  using namespace detail;
  if (x.rank() != 2 || x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: " + to_string(x.shape()) + " not divisible into " + std::to_string(heads) + " heads");
  }
  const std::size_t t = x.dim(0), d = x.dim(1) / heads;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      std::copy_n(x.data().data() + i * heads * d + h * d, d, out.data() + (h * t + i) * d);
  auto px = x.node();
  return make_op<T>("split_heads", {heads, t, d}, std::move(out), {px}, [px = px.get(), t, d, heads](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < d; ++j) g[i * heads * d + h * d + j] += self.grad[(h * t + i) * d + j];
  });
}

/// [heads, T, d] -> [T, heads*d]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  using namespace detail;
  if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + to_string(x.shape()));
  const std::size_t heads = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<T> out(x.size());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < t; ++i)
      std::copy_n(x.data().data() + (h * t + i) * d, d, out.data() + i * heads * d + h * d);
  auto px = x.node();
  return make_op<T>("merge_heads", {t, heads * d}, std::move(out), {px}, [px = px.get(), t, d, heads](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) g[(h * t + i) * d + j] += self.grad[i * heads * d + h * d + j];
  });
}

/// y[h, ...] = w[h] * x[h, ...]
template <class T>
Tensor<T> scale_leading(const Tensor<T>& x, const Tensor<T>& w) {
  using namespace detail;
  if (w.rank() != 1 || x.rank() < 1 || x.dim(0) != w.dim(0)) {
    throw ShapeError("scale_leading: weights " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  }
  const std::size_t lead = x.dim(0), inner = x.size() / lead;
  std::vector<T> out(x.size());
  for (std::size_t h = 0; h < lead; ++h)
    for (std::size_t i = 0; i < inner; ++i) out[h * inner + i] = w[h] * x[h * inner + i];
  auto px = x.node(), pw = w.node();
  return make_op<T>("scale_leading", x.shape(), std::move(out), {px, pw},
                    [px = px.get(), pw = pw.get(), lead, inner](Node<T>& self) {
                      for (std::size_t h = 0; h < lead; ++h) {
                        if (pw->requires_grad) {
                          T acc = 0;
                          for (std::size_t i = 0; i < inner; ++i) acc += self.grad[h * inner + i] * px->data[h * inner + i];
                          pw->ensure_grad()[h] += acc;
                        }
                        if (px->requires_grad) {
                          auto& g = px->ensure_grad();
                          for (std::size_t i = 0; i < inner; ++i) g[h * inner + i] += self.grad[h * inner + i] * pw->data[h];
                        }
                      }
                    });
}

/// num[..., n] / (den[..., 1] + eps), row by row.
template <class T>
Tensor<T> div_rows(const Tensor<T>& num, const Tensor<T>& den, T eps) {
  using namespace detail;
  const std::size_t n = num.dim(-1), rows = num.size() / n;
  if (den.size() != rows || den.dim(-1) != 1) {
    throw ShapeError("div_rows: denominator " + to_string(den.shape()) + " vs numerator " + to_string(num.shape()));
  }
  std::vector<T> out(num.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T inv = T(1) / (den[r] + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = num[r * n + j] * inv;
  }
  auto pn = num.node(), pd = den.node();
  return make_op<T>("div_rows", num.shape(), std::move(out), {pn, pd},
                    [pn = pn.get(), pd = pd.get(), n, rows, eps](Node<T>& self) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T inv = T(1) / (pd->data[r] + eps);
                        if (pn->requires_grad) {
                          auto& g = pn->ensure_grad();
                          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r * n + j] * inv;
                        }
                        if (pd->requires_grad) {
                          T acc = 0;
                          for (std::size_t j = 0; j < n; ++j) acc += self.grad[r * n + j] * self.data[r * n + j];
                          pd->ensure_grad()[r] -= acc * inv;
                        }
                      }
                    });
}

/// Detached elementwise copy in another precision.
template <class U, class T>
Tensor<U> cast(const Tensor<T>& x) {
  std::vector<U> out(x.data().begin(), x.data().end());
  return Tensor<U>(x.shape(), std::move(out), false);
}

}  // namespace infini

#endif  // INFINI_TENSOR_HPP_
