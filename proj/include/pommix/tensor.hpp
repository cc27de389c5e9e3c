#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pommix/blas.hpp"

namespace pommix::ad {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a,
                                    const Shape& b) {
  throw TensorError(std::string("shape mismatch in ") + op + ": " +
                    shape_str(a) + " vs " + shape_str(b));
}

// When enabled, every op forward pass is scanned for NaN/Inf. Tests turn this
// on; training leaves it off.
inline bool& debug_check_finite() {
  static bool enabled = false;
  return enabled;
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool backward_ran = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Value-semantics handle onto a node of the op graph. Ops are free functions
// below; backward() runs reverse-mode accumulation from a scalar.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }
  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value.assign(static_cast<std::size_t>(numel_of(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from(Shape shape, std::vector<T> data,
                     bool requires_grad = false) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw TensorError("from(): data size does not match shape " +
                        shape_str(shape));
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_->value.size()); }
  std::int64_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::int64_t rows() const {
    return n_->shape.empty() ? 1 : n_->shape.front();
  }
  std::int64_t cols() const {
    return n_->shape.size() >= 2 ? n_->shape[1] : 1;
  }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<T>& value() const { return n_->value; }
  std::vector<T>& mutable_value() { return n_->value; }
  const std::vector<T>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() { n_->grad.clear(); }
  T item() const {
    if (numel() != 1) throw TensorError("item(): tensor is not scalar");
    return n_->value[0];
  }

  NodePtr<T>& node() { return n_; }
  const NodePtr<T>& node() const { return n_; }

  // Reverse-mode pass from a scalar. Gradients accumulate into every
  // reachable node with requires_grad. Calling twice on the same root
  // without rebuilding the graph is an error.
  void backward() const {
    if (numel() != 1) throw TensorError("backward(): loss must be scalar");
    if (n_->backward_ran)
      throw TensorError("backward(): already ran on this graph; rebuild or reset");
    n_->backward_ran = true;

    // Iterative topological order over the requires_grad subgraph.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        TensorNode<T>* p = node->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  NodePtr<T> n_;
};

namespace detail {

template <typename T>
inline void check_finite(const TensorNode<T>& n) {
  if (!debug_check_finite()) return;
  for (T v : n.value)
    if (!std::isfinite(v))
      throw TensorError(std::string("non-finite value in output of op ") + n.op);
}

template <typename T>
inline Tensor<T> make_op(const char* op, Shape shape,
                         std::vector<Tensor<T>> parents,
                         std::function<void(std::vector<T>&)> forward,
                         std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->op = op;
  n->shape = std::move(shape);
  n->value.assign(static_cast<std::size_t>(numel_of(n->shape)), T(0));
  forward(n->value);
  bool rg = false;
  for (auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  check_finite(*n);
  return Tensor<T>(std::move(n));
}

template <typename T>
inline void accum(const NodePtr<T>& p, std::size_t i, T v) {
  if (p->requires_grad) {
    p->ensure_grad();
    p->grad[i] += v;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Broadcasting rules: identical shapes, scalar on the
// right, or a length-C vector against an [R x C] matrix (bias add).
// ---------------------------------------------------------------------------

enum class Bcast { same, scalar, row };

template <typename T>
inline Bcast bcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.numel() == 1) return Bcast::scalar;
  if (a.shape().size() == 2 && b.numel() == a.cols() &&
      b.shape().size() <= 2 &&
      (b.shape().size() == 1 || b.shape()[0] == 1))
    return Bcast::row;
  shape_fail(op, a.shape(), b.shape());
}

template <typename T, typename FwdF, typename DaF, typename DbF>
inline Tensor<T> binary_bcast(const char* opname, const Tensor<T>& a,
                              const Tensor<T>& b, FwdF f, DaF da, DbF db) {
  Bcast k = bcast_kind(opname, a, b);
  const std::int64_t n = a.numel(), c = a.cols();
  auto pa = a.node(), pb = b.node();
  auto bidx = [k, c](std::int64_t i) -> std::int64_t {
    switch (k) {
      case Bcast::same: return i;
      case Bcast::scalar: return 0;
      default: return i % c;
    }
  };
  return detail::make_op<T>(
      opname, a.shape(), {a, b},
      [&, n](std::vector<T>& out) {
        const auto& av = pa->value;
        const auto& bv = pb->value;
        for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i], bv[bidx(i)]);
      },
      [pa, pb, bidx, n, da, db](TensorNode<T>& self) {
        for (std::int64_t i = 0; i < n; ++i) {
          const T g = self.grad[i];
          const std::int64_t j = bidx(i);
          detail::accum(pa, i, g * da(pa->value[i], pb->value[j]));
          detail::accum(pb, j, g * db(pa->value[i], pb->value[j]));
        }
      });
}

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
inline Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

// Elementwise min/max; gradient goes to the first argument on ties.
template <typename T>
inline Tensor<T> emin(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "emin", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y) { return x <= y ? T(1) : T(0); },
      [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <typename T>
inline Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_bcast<T>(
      "emax", a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y) { return x >= y ? T(1) : T(0); },
      [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <typename T, typename FwdF, typename DerF>
inline Tensor<T> unary_op(const char* opname, const Tensor<T>& a, FwdF f,
                          DerF d) {
  auto pa = a.node();
  const std::int64_t n = a.numel();
  return detail::make_op<T>(
      opname, a.shape(), {a},
      [&, n](std::vector<T>& out) {
        for (std::int64_t i = 0; i < n; ++i) out[i] = f(pa->value[i]);
      },
      [pa, n, d](TensorNode<T>& self) {
        for (std::int64_t i = 0; i < n; ++i)
          detail::accum(pa, i, self.grad[i] * d(pa->value[i], self.value[i]));
      });
}

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, double c) {
  return unary_op<T>(
      "add_c", a, [c](T x) { return x + T(c); }, [](T, T) { return T(1); });
}
template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, double c) {
  return unary_op<T>(
      "mul_c", a, [c](T x) { return x * T(c); }, [c](T, T) { return T(c); });
}
template <typename T>
inline Tensor<T> sub(double c, const Tensor<T>& a) {
  return unary_op<T>(
      "rsub_c", a, [c](T x) { return T(c) - x; }, [](T, T) { return T(-1); });
}
template <typename T>
inline Tensor<T> neg(const Tensor<T>& a) {
  return mul(a, -1.0);
}

template <typename T>
inline Tensor<T> relu(const Tensor<T>& a) {
  return unary_op<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
inline Tensor<T> leaky_relu(const Tensor<T>& a, double slope = 0.2) {
  return unary_op<T>(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : T(slope) * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : T(slope); });
}

template <typename T>
inline Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>(
      "sigmoid", a,
      [](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

// Clamp to [lo, hi]; zero gradient outside the open interval.
template <typename T>
inline Tensor<T> hardtanh(const Tensor<T>& a, double lo, double hi) {
  return unary_op<T>(
      "hardtanh", a,
      [lo, hi](T x) { return std::clamp(x, T(lo), T(hi)); },
      [lo, hi](T x, T) { return (x > T(lo) && x < T(hi)) ? T(1) : T(0); });
}

template <typename T>
inline Tensor<T> sqrt_op(const Tensor<T>& a) {
  return unary_op<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
inline Tensor<T> abs_op(const Tensor<T>& a) {
  return unary_op<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() > 2 || b.shape().size() != 2)
    shape_fail("matmul", a.shape(), b.shape());
  const std::int64_t m = a.shape().size() == 2 ? a.dim(0) : 1;
  const std::int64_t k = a.shape().size() == 2 ? a.dim(1) : a.dim(0);
  if (k != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  const std::int64_t n = b.dim(1);
  auto pa = a.node(), pb = b.node();
  Shape out_shape = a.shape().size() == 2 ? Shape{m, n} : Shape{n};
  return detail::make_op<T>(
      "matmul", std::move(out_shape), {a, b},
      [&](std::vector<T>& out) {
        gemm(false, false, int(m), int(n), int(k), T(1), pa->value.data(),
             int(k), pb->value.data(), int(n), T(0), out.data(), int(n));
      },
      [pa, pb, m, n, k](TensorNode<T>& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          // dA += dC * B^T
          gemm(false, true, int(m), int(k), int(n), T(1), self.grad.data(),
               int(n), pb->value.data(), int(n), T(1), pa->grad.data(), int(k));
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          // dB += A^T * dC
          gemm(true, false, int(k), int(n), int(m), T(1), pa->value.data(),
               int(k), self.grad.data(), int(n), T(1), pb->grad.data(), int(n));
        }
      });
}

template <typename T>
inline Tensor<T> transpose(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw TensorError("transpose: need 2-D tensor");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  auto pa = a.node();
  return detail::make_op<T>(
      "transpose", {n, m}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j)
            out[j * m + i] = pa->value[i * n + j];
      },
      [pa, m, n](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j)
            pa->grad[i * n + j] += self.grad[j * m + i];
      });
}

template <typename T>
inline Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    shape_fail("reshape", a.shape(), shape);
  auto pa = a.node();
  const std::int64_t n = a.numel();
  return detail::make_op<T>(
      "reshape", std::move(shape), {a},
      [&](std::vector<T>& out) { out = pa->value; },
      [pa, n](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
      });
}

// Concatenate along axis 0 or 1. 1-D tensors concat along axis 0.
template <typename T>
inline Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  if (parts[0].shape().size() == 1) {
    if (axis != 0) throw TensorError("concat: 1-D tensors concat on axis 0");
    std::int64_t total = 0;
    for (auto& p : parts) total += p.numel();
    std::vector<NodePtr<T>> ps;
    for (auto& p : parts) ps.push_back(p.node());
    return detail::make_op<T>(
        "concat", {total}, parts,
        [&](std::vector<T>& out) {
          std::int64_t o = 0;
          for (auto& p : ps) {
            std::copy(p->value.begin(), p->value.end(), out.begin() + o);
            o += static_cast<std::int64_t>(p->value.size());
          }
        },
        [ps](TensorNode<T>& self) {
          std::int64_t o = 0;
          for (auto& p : ps) {
            const auto sz = static_cast<std::int64_t>(p->value.size());
            if (p->requires_grad) {
              p->ensure_grad();
              for (std::int64_t i = 0; i < sz; ++i)
                p->grad[i] += self.grad[o + i];
            }
            o += sz;
          }
        });
  }
  if (axis != 0 && axis != 1) throw TensorError("concat: axis must be 0 or 1");
  const std::int64_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::int64_t var = 0;
  for (auto& p : parts) {
    if (p.shape().size() != 2 ||
        (axis == 0 ? p.cols() : p.rows()) != fixed)
      shape_fail("concat", parts[0].shape(), p.shape());
    var += axis == 0 ? p.rows() : p.cols();
  }
  const Shape out_shape =
      axis == 0 ? Shape{var, fixed} : Shape{fixed, var};
  std::vector<NodePtr<T>> ps;
  for (auto& p : parts) ps.push_back(p.node());
  const std::int64_t out_cols = out_shape[1];
  return detail::make_op<T>(
      "concat", out_shape, parts,
      [&, axis](std::vector<T>& out) {
        if (axis == 0) {
          std::int64_t o = 0;
          for (auto& p : ps) {
            std::copy(p->value.begin(), p->value.end(), out.begin() + o);
            o += static_cast<std::int64_t>(p->value.size());
          }
        } else {
          std::int64_t col0 = 0;
          for (auto& p : ps) {
            const std::int64_t pc = p->shape[1];
            for (std::int64_t r = 0; r < p->shape[0]; ++r)
              std::copy(p->value.begin() + r * pc,
                        p->value.begin() + (r + 1) * pc,
                        out.begin() + r * out_cols + col0);
            col0 += pc;
          }
        }
      },
      [ps, axis, out_cols](TensorNode<T>& self) {
        if (axis == 0) {
          std::int64_t o = 0;
          for (auto& p : ps) {
            const auto sz = static_cast<std::int64_t>(p->value.size());
            if (p->requires_grad) {
              p->ensure_grad();
              for (std::int64_t i = 0; i < sz; ++i)
                p->grad[i] += self.grad[o + i];
            }
            o += sz;
          }
        } else {
          std::int64_t col0 = 0;
          for (auto& p : ps) {
            const std::int64_t pc = p->shape[1];
            if (p->requires_grad) {
              p->ensure_grad();
              for (std::int64_t r = 0; r < p->shape[0]; ++r)
                for (std::int64_t c = 0; c < pc; ++c)
                  p->grad[r * pc + c] += self.grad[r * out_cols + col0 + c];
            }
            col0 += pc;
          }
        }
      });
}

template <typename T>
inline Tensor<T> slice(const Tensor<T>& a, int axis, std::int64_t start,
                       std::int64_t len) {
  if (a.shape().size() == 1) {
    if (axis != 0 || start < 0 || start + len > a.numel())
      throw TensorError("slice: out of range");
    auto pa = a.node();
    return detail::make_op<T>(
        "slice", {len}, {a},
        [&](std::vector<T>& out) {
          std::copy(pa->value.begin() + start, pa->value.begin() + start + len,
                    out.begin());
        },
        [pa, start, len](TensorNode<T>& self) {
          pa->ensure_grad();
          for (std::int64_t i = 0; i < len; ++i)
            pa->grad[start + i] += self.grad[i];
        });
  }
  if (a.shape().size() != 2 || (axis != 0 && axis != 1))
    throw TensorError("slice: need 2-D tensor and axis 0/1");
  const std::int64_t r = a.dim(0), c = a.dim(1);
  if (start < 0 || start + len > (axis == 0 ? r : c))
    throw TensorError("slice: out of range");
  auto pa = a.node();
  const Shape out_shape = axis == 0 ? Shape{len, c} : Shape{r, len};
  return detail::make_op<T>(
      "slice", out_shape, {a},
      [&, axis](std::vector<T>& out) {
        if (axis == 0) {
          std::copy(pa->value.begin() + start * c,
                    pa->value.begin() + (start + len) * c, out.begin());
        } else {
          for (std::int64_t i = 0; i < r; ++i)
            std::copy(pa->value.begin() + i * c + start,
                      pa->value.begin() + i * c + start + len,
                      out.begin() + i * len);
        }
      },
      [pa, axis, start, len, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        if (axis == 0) {
          for (std::int64_t i = 0; i < len * c; ++i)
            pa->grad[start * c + i] += self.grad[i];
        } else {
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < len; ++j)
              pa->grad[i * c + start + j] += self.grad[i * len + j];
        }
      });
}

// Gather rows of a 2-D tensor (or entries of a 1-D one).
template <typename T>
inline Tensor<T> index_select(const Tensor<T>& a,
                              const std::vector<std::int64_t>& idx) {
  const bool vec = a.shape().size() == 1;
  const std::int64_t r = a.rows(), c = vec ? 1 : a.dim(1);
  for (auto i : idx)
    if (i < 0 || i >= r) throw TensorError("index_select: index out of range");
  auto pa = a.node();
  const std::int64_t m = static_cast<std::int64_t>(idx.size());
  Shape out_shape = vec ? Shape{m} : Shape{m, c};
  return detail::make_op<T>(
      "index_select", std::move(out_shape), {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < m; ++i)
          std::copy(pa->value.begin() + idx[i] * c,
                    pa->value.begin() + (idx[i] + 1) * c, out.begin() + i * c);
      },
      [pa, idx, m, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            pa->grad[idx[i] * c + j] += self.grad[i * c + j];
      });
}

// Scale row i of a matrix by v[i]. Also accepts 1-D a (elementwise).
template <typename T>
inline Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& v) {
  if (v.numel() != a.rows()) shape_fail("scale_rows", a.shape(), v.shape());
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  auto pa = a.node(), pv = v.node();
  return detail::make_op<T>(
      "scale_rows", a.shape(), {a, v},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            out[i * c + j] = pa->value[i * c + j] * pv->value[i];
      },
      [pa, pv, r, c](TensorNode<T>& self) {
        for (std::int64_t i = 0; i < r; ++i) {
          T acc = T(0);
          for (std::int64_t j = 0; j < c; ++j) {
            const T g = self.grad[i * c + j];
            detail::accum(pa, i * c + j, g * pv->value[i]);
            acc += g * pa->value[i * c + j];
          }
          detail::accum(pv, i, acc);
        }
      });
}

// Scale column j of a matrix by v[j].
template <typename T>
inline Tensor<T> scale_cols(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.shape().size() != 2 || v.numel() != a.dim(1))
    shape_fail("scale_cols", a.shape(), v.shape());
  const std::int64_t r = a.dim(0), c = a.dim(1);
  auto pa = a.node(), pv = v.node();
  return detail::make_op<T>(
      "scale_cols", a.shape(), {a, v},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            out[i * c + j] = pa->value[i * c + j] * pv->value[j];
      },
      [pa, pv, r, c](TensorNode<T>& self) {
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const T g = self.grad[i * c + j];
            detail::accum(pa, i * c + j, g * pv->value[j]);
            detail::accum(pv, j, g * pa->value[i * c + j]);
          }
      });
}

// ---------------------------------------------------------------------------
// Reductions. Masked variants reduce over rows (axis 0) of a 2-D tensor and
// never read masked-out rows, so outputs are invariant to their contents.
// Population std with eps inside the square root. Min/max send gradient to
// the first attaining row on ties.
// ---------------------------------------------------------------------------

inline constexpr double kStdEps = 1e-5;

namespace detail {

template <typename T>
inline std::vector<std::int64_t> mask_rows(const Tensor<T>& mask,
                                           std::int64_t r, const char* op) {
  if (mask.numel() != r)
    throw TensorError(std::string(op) + ": mask length " +
                      std::to_string(mask.numel()) + " vs rows " +
                      std::to_string(r));
  std::vector<std::int64_t> keep;
  for (std::int64_t i = 0; i < r; ++i)
    if (mask.value()[i] > T(0.5)) keep.push_back(i);
  if (keep.empty())
    throw TensorError(std::string(op) + ": all rows masked out");
  return keep;
}

}  // namespace detail

template <typename T>
inline Tensor<T> masked_mean(const Tensor<T>& a, const Tensor<T>& mask) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  auto keep = detail::mask_rows(mask, r, "masked_mean");
  auto pa = a.node();
  const T inv = T(1) / T(keep.size());
  return detail::make_op<T>(
      "masked_mean", {c}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t j = 0; j < c; ++j) {
          T s = T(0);
          for (auto i : keep) s += pa->value[i * c + j];
          out[j] = s * inv;
        }
      },
      [pa, keep, c, inv](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t j = 0; j < c; ++j)
          for (auto i : keep) pa->grad[i * c + j] += self.grad[j] * inv;
      });
}

template <typename T>
inline Tensor<T> masked_std(const Tensor<T>& a, const Tensor<T>& mask) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  auto keep = detail::mask_rows(mask, r, "masked_std");
  auto pa = a.node();
  const T inv = T(1) / T(keep.size());
  return detail::make_op<T>(
      "masked_std", {c}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t j = 0; j < c; ++j) {
          T mu = T(0);
          for (auto i : keep) mu += pa->value[i * c + j];
          mu *= inv;
          T var = T(0);
          for (auto i : keep) {
            const T d = pa->value[i * c + j] - mu;
            var += d * d;
          }
          out[j] = std::sqrt(var * inv + T(kStdEps));
        }
      },
      [pa, keep, c, inv](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t j = 0; j < c; ++j) {
          T mu = T(0);
          for (auto i : keep) mu += pa->value[i * c + j];
          mu *= inv;
          for (auto i : keep)
            pa->grad[i * c + j] += self.grad[j] * inv *
                                   (pa->value[i * c + j] - mu) / self.value[j];
        }
      });
}

template <typename T, bool kMax>
inline Tensor<T> masked_extremum(const Tensor<T>& a, const Tensor<T>& mask) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  auto keep = detail::mask_rows(mask, r, kMax ? "masked_max" : "masked_min");
  auto pa = a.node();
  auto arg = std::make_shared<std::vector<std::int64_t>>(c);
  return detail::make_op<T>(
      kMax ? "masked_max" : "masked_min", {c}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t j = 0; j < c; ++j) {
          std::int64_t best = keep[0];
          for (auto i : keep) {
            const T v = pa->value[i * c + j], b = pa->value[best * c + j];
            if (kMax ? v > b : v < b) best = i;
          }
          (*arg)[j] = best;
          out[j] = pa->value[best * c + j];
        }
      },
      [pa, arg, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t j = 0; j < c; ++j)
          pa->grad[(*arg)[j] * c + j] += self.grad[j];
      });
}

template <typename T>
inline Tensor<T> masked_min(const Tensor<T>& a, const Tensor<T>& mask) {
  return masked_extremum<T, false>(a, mask);
}
template <typename T>
inline Tensor<T> masked_max(const Tensor<T>& a, const Tensor<T>& mask) {
  return masked_extremum<T, true>(a, mask);
}

template <typename T>
inline Tensor<T> ones_mask(std::int64_t r) {
  return Tensor<T>::filled({r}, T(1));
}

template <typename T>
inline Tensor<T> reduce_mean(const Tensor<T>& a) {
  return masked_mean(a, ones_mask<T>(a.rows()));
}
template <typename T>
inline Tensor<T> reduce_std(const Tensor<T>& a) {
  return masked_std(a, ones_mask<T>(a.rows()));
}
template <typename T>
inline Tensor<T> reduce_min(const Tensor<T>& a) {
  return masked_min(a, ones_mask<T>(a.rows()));
}
template <typename T>
inline Tensor<T> reduce_max(const Tensor<T>& a) {
  return masked_max(a, ones_mask<T>(a.rows()));
}

// Sum across each row of a 2-D tensor -> length-R vector.
template <typename T>
inline Tensor<T> row_sum(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw TensorError("row_sum: need 2-D tensor");
  const std::int64_t r = a.dim(0), c = a.dim(1);
  auto pa = a.node();
  return detail::make_op<T>(
      "row_sum", {r}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i) {
          T s = T(0);
          for (std::int64_t j = 0; j < c; ++j) s += pa->value[i * c + j];
          out[i] = s;
        }
      },
      [pa, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            pa->grad[i * c + j] += self.grad[i];
      });
}

template <typename T>
inline Tensor<T> reduce_sum_all(const Tensor<T>& a) {
  auto pa = a.node();
  const std::int64_t n = a.numel();
  return detail::make_op<T>(
      "reduce_sum_all", {1}, {a},
      [&](std::vector<T>& out) {
        T s = T(0);
        for (T v : pa->value) s += v;
        out[0] = s;
      },
      [pa, n](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[0];
      });
}

template <typename T>
inline Tensor<T> reduce_mean_all(const Tensor<T>& a) {
  return mul(reduce_sum_all(a), 1.0 / double(a.numel()));
}

// ---------------------------------------------------------------------------
// Segment ops: rows grouped by a segment id (used for batched graphs).
// ---------------------------------------------------------------------------

namespace detail {

inline void check_segments(const std::vector<std::int64_t>& seg,
                           std::int64_t rows, std::int64_t nseg,
                           const char* op) {
  if (static_cast<std::int64_t>(seg.size()) != rows)
    throw TensorError(std::string(op) + ": segment ids do not cover rows");
  for (auto s : seg)
    if (s < 0 || s >= nseg)
      throw TensorError(std::string(op) + ": segment id out of range");
}

}  // namespace detail

template <typename T>
inline Tensor<T> segment_sum(const Tensor<T>& a,
                             const std::vector<std::int64_t>& seg,
                             std::int64_t nseg) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  detail::check_segments(seg, r, nseg, "segment_sum");
  auto pa = a.node();
  Shape out_shape = a.shape().size() == 2 ? Shape{nseg, c} : Shape{nseg};
  return detail::make_op<T>(
      "segment_sum", std::move(out_shape), {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            out[seg[i] * c + j] += pa->value[i * c + j];
      },
      [pa, seg, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            pa->grad[i * c + j] += self.grad[seg[i] * c + j];
      });
}

namespace detail {

inline std::vector<std::int64_t> segment_counts(
    const std::vector<std::int64_t>& seg, std::int64_t nseg, const char* op) {
  std::vector<std::int64_t> cnt(nseg, 0);
  for (auto s : seg) ++cnt[s];
  for (std::int64_t s = 0; s < nseg; ++s)
    if (cnt[s] == 0)
      throw TensorError(std::string(op) + ": empty segment " +
                        std::to_string(s));
  return cnt;
}

}  // namespace detail

template <typename T>
inline Tensor<T> segment_mean(const Tensor<T>& a,
                              const std::vector<std::int64_t>& seg,
                              std::int64_t nseg) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  detail::check_segments(seg, r, nseg, "segment_mean");
  auto cnt = detail::segment_counts(seg, nseg, "segment_mean");
  auto pa = a.node();
  return detail::make_op<T>(
      "segment_mean", {nseg, c}, {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            out[seg[i] * c + j] += pa->value[i * c + j];
        for (std::int64_t s = 0; s < nseg; ++s)
          for (std::int64_t j = 0; j < c; ++j) out[s * c + j] /= T(cnt[s]);
      },
      [pa, seg, cnt, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            pa->grad[i * c + j] += self.grad[seg[i] * c + j] / T(cnt[seg[i]]);
      });
}

template <typename T>
inline Tensor<T> segment_std(const Tensor<T>& a,
                             const std::vector<std::int64_t>& seg,
                             std::int64_t nseg) {
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  detail::check_segments(seg, r, nseg, "segment_std");
  auto cnt = detail::segment_counts(seg, nseg, "segment_std");
  auto pa = a.node();
  auto means = std::make_shared<std::vector<T>>(nseg * c, T(0));
  return detail::make_op<T>(
      "segment_std", {nseg, c}, {a},
      [&](std::vector<T>& out) {
        auto& mu = *means;
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            mu[seg[i] * c + j] += pa->value[i * c + j];
        for (std::int64_t s = 0; s < nseg; ++s)
          for (std::int64_t j = 0; j < c; ++j) mu[s * c + j] /= T(cnt[s]);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const T d = pa->value[i * c + j] - mu[seg[i] * c + j];
            out[seg[i] * c + j] += d * d;
          }
        for (std::int64_t s = 0; s < nseg; ++s)
          for (std::int64_t j = 0; j < c; ++j)
            out[s * c + j] = std::sqrt(out[s * c + j] / T(cnt[s]) + T(kStdEps));
      },
      [pa, seg, cnt, means, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        const auto& mu = *means;
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const std::int64_t o = seg[i] * c + j;
            pa->grad[i * c + j] += self.grad[o] *
                                   (pa->value[i * c + j] - mu[o]) /
                                   (T(cnt[seg[i]]) * self.value[o]);
          }
      });
}

template <typename T, bool kMax>
inline Tensor<T> segment_extremum(const Tensor<T>& a,
                                  const std::vector<std::int64_t>& seg,
                                  std::int64_t nseg) {
  const char* opn = kMax ? "segment_max" : "segment_min";
  const std::int64_t r = a.rows(), c = a.shape().size() == 2 ? a.dim(1) : 1;
  detail::check_segments(seg, r, nseg, opn);
  detail::segment_counts(seg, nseg, opn);
  auto pa = a.node();
  auto arg = std::make_shared<std::vector<std::int64_t>>(nseg * c, -1);
  return detail::make_op<T>(
      opn, {nseg, c}, {a},
      [&](std::vector<T>& out) {
        auto& am = *arg;
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const std::int64_t o = seg[i] * c + j;
            const T v = pa->value[i * c + j];
            if (am[o] < 0 || (kMax ? v > out[o] : v < out[o])) {
              am[o] = i;
              out[o] = v;
            }
          }
      },
      [pa, arg, nseg, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t o = 0; o < nseg * c; ++o)
          pa->grad[(*arg)[o] * c + (o % c)] += self.grad[o];
      });
}

template <typename T>
inline Tensor<T> segment_min(const Tensor<T>& a,
                             const std::vector<std::int64_t>& seg,
                             std::int64_t nseg) {
  return segment_extremum<T, false>(a, seg, nseg);
}
template <typename T>
inline Tensor<T> segment_max(const Tensor<T>& a,
                             const std::vector<std::int64_t>& seg,
                             std::int64_t nseg) {
  return segment_extremum<T, true>(a, seg, nseg);
}

// Softmax of a score vector within each segment.
template <typename T>
inline Tensor<T> segment_softmax(const Tensor<T>& scores,
                                 const std::vector<std::int64_t>& seg,
                                 std::int64_t nseg) {
  if (scores.shape().size() != 1)
    throw TensorError("segment_softmax: scores must be 1-D");
  const std::int64_t r = scores.numel();
  detail::check_segments(seg, r, nseg, "segment_softmax");
  detail::segment_counts(seg, nseg, "segment_softmax");
  auto pa = scores.node();
  return detail::make_op<T>(
      "segment_softmax", {r}, {scores},
      [&](std::vector<T>& out) {
        std::vector<T> mx(nseg, -std::numeric_limits<T>::infinity());
        for (std::int64_t i = 0; i < r; ++i)
          mx[seg[i]] = std::max(mx[seg[i]], pa->value[i]);
        std::vector<T> z(nseg, T(0));
        for (std::int64_t i = 0; i < r; ++i) {
          out[i] = std::exp(pa->value[i] - mx[seg[i]]);
          z[seg[i]] += out[i];
        }
        for (std::int64_t i = 0; i < r; ++i) out[i] /= z[seg[i]];
      },
      [pa, seg, nseg, r](TensorNode<T>& self) {
        pa->ensure_grad();
        std::vector<T> dot(nseg, T(0));
        for (std::int64_t i = 0; i < r; ++i)
          dot[seg[i]] += self.grad[i] * self.value[i];
        for (std::int64_t i = 0; i < r; ++i)
          pa->grad[i] += self.value[i] * (self.grad[i] - dot[seg[i]]);
      });
}

// Row-wise softmax of an [R x C] score matrix restricted to unmasked key
// columns; masked columns output 0 and receive exactly zero gradient.
template <typename T>
inline Tensor<T> softmax_rows_masked(const Tensor<T>& logits,
                                     const Tensor<T>& key_mask) {
  if (logits.shape().size() != 2)
    throw TensorError("softmax_rows_masked: need 2-D logits");
  const std::int64_t r = logits.dim(0), c = logits.dim(1);
  auto keep = detail::mask_rows(key_mask, c, "softmax_rows_masked");
  auto pa = logits.node();
  return detail::make_op<T>(
      "softmax_rows_masked", {r, c}, {logits},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < r; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (auto j : keep) mx = std::max(mx, pa->value[i * c + j]);
          T z = T(0);
          for (auto j : keep) {
            out[i * c + j] = std::exp(pa->value[i * c + j] - mx);
            z += out[i * c + j];
          }
          for (auto j : keep) out[i * c + j] /= z;
        }
      },
      [pa, keep, r, c](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
          T dot = T(0);
          for (auto j : keep)
            dot += self.grad[i * c + j] * self.value[i * c + j];
          for (auto j : keep)
            pa->grad[i * c + j] +=
                self.value[i * c + j] * (self.grad[i * c + j] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Dropout. The sampled mask is retained for the backward pass. The
// mask-injection variant exists so gradient checks can hold the mask fixed.
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> dropout_with_mask(const Tensor<T>& a,
                                   std::shared_ptr<std::vector<std::uint8_t>> mask,
                                   double keep_prob) {
  if (static_cast<std::int64_t>(mask->size()) != a.numel())
    throw TensorError("dropout: mask size mismatch");
  auto pa = a.node();
  const std::int64_t n = a.numel();
  const T scale = T(1.0 / keep_prob);
  return detail::make_op<T>(
      "dropout", a.shape(), {a},
      [&](std::vector<T>& out) {
        for (std::int64_t i = 0; i < n; ++i)
          out[i] = (*mask)[i] ? pa->value[i] * scale : T(0);
      },
      [pa, mask, n, scale](TensorNode<T>& self) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          if ((*mask)[i]) pa->grad[i] += self.grad[i] * scale;
      });
}

template <typename T>
inline Tensor<T> dropout(const Tensor<T>& a, double p, bool training,
                         std::mt19937_64& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw TensorError("dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<std::uint8_t>>(a.numel());
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& m : *mask) m = keep(rng) ? 1 : 0;
  return dropout_with_mask(a, std::move(mask), 1.0 - p);
}

// ---------------------------------------------------------------------------
// Composite vector ops and losses
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> l2_normalize(const Tensor<T>& v) {
  auto nrm = sqrt_op(reduce_sum_all(mul(v, v)));
  if (nrm.item() <= T(0))
    throw TensorError("l2_normalize: zero-norm vector");
  return div(v, nrm);
}

template <typename T>
inline Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("cosine_similarity", a.shape(), b.shape());
  auto dot = reduce_sum_all(mul(a, b));
  auto na = sqrt_op(reduce_sum_all(mul(a, a)));
  auto nb = sqrt_op(reduce_sum_all(mul(b, b)));
  if (na.item() <= T(0) || nb.item() <= T(0))
    throw TensorError("cosine_similarity: zero-norm input");
  return div(dot, mul(na, nb));
}

// Row-wise cosine similarity of two [R x C] matrices -> length-R vector.
template <typename T>
inline Tensor<T> cosine_similarity_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2)
    shape_fail("cosine_similarity_rows", a.shape(), b.shape());
  auto dot = row_sum(mul(a, b));
  auto na = sqrt_op(row_sum(mul(a, a)));
  auto nb = sqrt_op(row_sum(mul(b, b)));
  for (std::int64_t i = 0; i < na.numel(); ++i)
    if (na.value()[i] <= T(0) || nb.value()[i] <= T(0))
      throw TensorError("cosine_similarity_rows: zero-norm row " +
                        std::to_string(i));
  return div(dot, mul(na, nb));
}

// Mean binary cross-entropy from logits; numerically stable form. Targets
// carry no gradient.
template <typename T>
inline Tensor<T> bce_with_logits(const Tensor<T>& logits,
                                 const Tensor<T>& targets) {
  if (logits.shape() != targets.shape())
    shape_fail("bce_with_logits", logits.shape(), targets.shape());
  auto px = logits.node(), pt = targets.node();
  const std::int64_t n = logits.numel();
  return detail::make_op<T>(
      "bce_with_logits", {1}, {logits},
      [&](std::vector<T>& out) {
        T s = T(0);
        for (std::int64_t i = 0; i < n; ++i) {
          const T x = px->value[i], z = pt->value[i];
          s += std::max(x, T(0)) - x * z + std::log1p(std::exp(-std::abs(x)));
        }
        out[0] = s / T(n);
      },
      [px, pt, n](TensorNode<T>& self) {
        px->ensure_grad();
        const T g = self.grad[0] / T(n);
        for (std::int64_t i = 0; i < n; ++i) {
          const T x = px->value[i];
          const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                  : std::exp(x) / (T(1) + std::exp(x));
          px->grad[i] += g * (sig - pt->value[i]);
        }
      });
}

// Mean absolute error; sign subgradient (0 at exact equality).
template <typename T>
inline Tensor<T> mae(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    shape_fail("mae", pred.shape(), target.shape());
  auto pp = pred.node(), pt = target.node();
  const std::int64_t n = pred.numel();
  return detail::make_op<T>(
      "mae", {1}, {pred},
      [&](std::vector<T>& out) {
        T s = T(0);
        for (std::int64_t i = 0; i < n; ++i)
          s += std::abs(pp->value[i] - pt->value[i]);
        out[0] = s / T(n);
      },
      [pp, pt, n](TensorNode<T>& self) {
        pp->ensure_grad();
        const T g = self.grad[0] / T(n);
        for (std::int64_t i = 0; i < n; ++i) {
          const T d = pp->value[i] - pt->value[i];
          pp->grad[i] += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
        }
      });
}

}  // namespace pommix::ad
