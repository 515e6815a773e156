#pragma once

// Minimal dense-tensor engine with reverse-mode differentiation. Values are
// stored row-major; the graph is a tape of shared nodes built during the
// forward pass and walked in reverse topological order by backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ctbound/common.hpp"

namespace ctbound {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// When false, ops compute values only and record no tape. Used for inference.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

  Tensor(const Shape& shape, T fill = T(0)) {
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = shape;
    node_->value.assign(shape_numel(shape), fill);
  }

  Tensor(const Shape& shape, std::vector<T> data) {
    if (data.size() != shape_numel(shape))
      throw ConfigError("Tensor: data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = shape;
    node_->value = std::move(data);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->value.size(); }
  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  T item() const {
    if (node_->value.size() != 1) throw ConfigError("Tensor::item: not a scalar");
    return node_->value[0];
  }

  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  // Reverse-mode sweep seeded with d(self)/d(self) = 1. Self must be scalar.
  void backward() const {
    if (node_->value.size() != 1) throw ConfigError("backward: loss must be scalar");
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    topo(node_.get(), seen, order);
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

 private:
  static void topo(TensorNode<T>* n, std::unordered_set<TensorNode<T>*>& seen,
                   std::vector<TensorNode<T>*>& order) {
    // iterative DFS; graphs can be deep (long training chains)
    struct Frame {
      TensorNode<T>* node;
      size_t next = 0;
    };
    if (seen.count(n)) return;
    std::vector<Frame> stack{{n}};
    seen.insert(n);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        TensorNode<T>* p = f.node->parents[f.next++].get();
        if (!seen.count(p)) {
          seen.insert(p);
          stack.push_back({p});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode()) {
    bool any = false;
    for (auto& p : parents)
      if (p.node()->requires_grad || p.node()->backward_fn || !p.node()->parents.empty())
        any = true;
    if (any) {
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward_fn = std::move(backward);
      n->requires_grad = true;
    }
  }
  return Tensor<T>(n);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ConfigError("broadcast: incompatible axis " + std::to_string(i) + " in " +
                        shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides with zeros on broadcast axes, right-aligned to out rank.
inline std::vector<size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<size_t> strides(out.size(), 0);
  size_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    size_t oi = out.size() - s.size() + i;
    strides[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= static_cast<size_t>(s[i]);
  }
  return strides;
}

// Applies fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename F>
void broadcast_iter(const Shape& out, const std::vector<size_t>& sa,
                    const std::vector<size_t>& sb, F&& fn) {
  const size_t n = shape_numel(out);
  const size_t rank = out.size();
  std::vector<size_t> idx(rank, 0);
  size_t ia = 0, ib = 0;
  for (size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < static_cast<size_t>(out[d])) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename FwdOp, typename BwdA, typename BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdOp fwd, BwdA da, BwdB db) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<T> value(shape_numel(out));
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < value.size(); ++i) value[i] = fwd(av[i], bv[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out);
    auto sb = broadcast_strides(b.shape(), out);
    broadcast_iter(out, sa, sb,
                   [&](size_t i, size_t ia, size_t ib) { value[i] = fwd(av[ia], bv[ib]); });
  }
  auto an = a.node();
  auto bn = b.node();
  Shape ash = a.shape(), bsh = b.shape();
  return make_result<T>(out, std::move(value), {a, b}, [an, bn, ash, bsh, out, da, db](TensorNode<T>& self) {
    an->ensure_grad();
    bn->ensure_grad();
    auto sa = broadcast_strides(ash, out);
    auto sb = broadcast_strides(bsh, out);
    broadcast_iter(out, sa, sb, [&](size_t i, size_t ia, size_t ib) {
      const T g = self.grad[i];
      an->grad[ia] += g * da(an->value[ia], bn->value[ib], self.value[i]);
      bn->grad[ib] += g * db(an->value[ia], bn->value[ib], self.value[i]);
    });
  });
}

template <typename T, typename FwdOp, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, FwdOp fwd, Bwd dfn) {
  std::vector<T> value(a.numel());
  for (size_t i = 0; i < value.size(); ++i) value[i] = fwd(a.data()[i]);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(value), {a}, [an, dfn](TensorNode<T>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i)
      an->grad[i] += self.grad[i] * dfn(an->value[i], self.value[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1}, std::vector<T>{v});
}

template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) {
  return detail::unary_op(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) {
  return detail::unary_op(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return a * T(-1);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / std::max(y, T(1e-20)); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Tensor<T> atan(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::atan(x); }, [](T x, T) { return T(1) / (T(1) + x * x); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// Elementwise minimum; on ties the gradient goes to the first argument.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T) { return x <= y ? T(1) : T(0); },
      [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

// Wraps values into [0, 2pi); unit gradient almost everywhere.
template <typename T>
Tensor<T> wrap_2pi(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return static_cast<T>(wrap_angle(static_cast<double>(x))); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto an = a.node();
  return detail::make_result<T>(Shape{1}, std::vector<T>{s}, {a}, [an](TensorNode<T>& self) {
    an->ensure_grad();
    for (auto& g : an->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return sum(a) * (T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw ConfigError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return detail::make_result<T>(shape, a.data(), {a}, [an](TensorNode<T>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i];
  });
}

// Concatenation along axis 0.
template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat0: no inputs");
  Shape shape = parts[0].shape();
  size_t rows = 0;
  for (auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) !=
        Shape(shape.begin() + 1, shape.end()))
      throw ConfigError("concat0: trailing shape mismatch");
    rows += static_cast<size_t>(p.shape()[0]);
  }
  shape[0] = static_cast<int>(rows);
  std::vector<T> value;
  value.reserve(shape_numel(shape));
  for (auto& p : parts) value.insert(value.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (auto& p : parts) nodes.push_back(p.node());
  return detail::make_result<T>(shape, std::move(value), parts, [nodes](TensorNode<T>& self) {
    size_t off = 0;
    for (auto& n : nodes) {
      n->ensure_grad();
      for (size_t i = 0; i < n->value.size(); ++i) n->grad[i] += self.grad[off + i];
      off += n->value.size();
    }
  });
}

// Slice along axis 0: rows [start, start+len).
template <typename T>
Tensor<T> slice0(const Tensor<T>& a, int start, int len) {
  Shape shape = a.shape();
  if (start < 0 || start + len > shape[0]) throw ConfigError("slice0: out of range");
  size_t rowsz = a.numel() / static_cast<size_t>(shape[0]);
  shape[0] = len;
  std::vector<T> value(a.data().begin() + start * rowsz,
                       a.data().begin() + (start + len) * rowsz);
  auto an = a.node();
  return detail::make_result<T>(shape, std::move(value), {a}, [an, start, rowsz](TensorNode<T>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i)
      an->grad[start * rowsz + i] += self.grad[i];
  });
}

// 1-D gather: out[i] = a[idx[i]].
template <typename T>
Tensor<T> gather1d(const Tensor<T>& a, const std::vector<int>& idx) {
  std::vector<T> value(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) value[i] = a.data()[idx[i]];
  auto an = a.node();
  return detail::make_result<T>(Shape{static_cast<int>(idx.size())}, std::move(value), {a},
                                [an, idx](TensorNode<T>& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < idx.size(); ++i)
                                    an->grad[idx[i]] += self.grad[i];
                                });
}

// Column slice of a rank-2 tensor: columns [start, start+len).
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int len) {
  if (a.shape().size() != 2) throw ConfigError("slice_cols: rank != 2");
  const int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || start + len > n) throw ConfigError("slice_cols: out of range");
  std::vector<T> value(static_cast<size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      value[static_cast<size_t>(i) * len + j] = a.data()[static_cast<size_t>(i) * n + start + j];
  auto an = a.node();
  return detail::make_result<T>(Shape{m, len}, std::move(value), {a},
                                [an, m, n, start, len](TensorNode<T>& self) {
                                  an->ensure_grad();
                                  for (int i = 0; i < m; ++i)
                                    for (int j = 0; j < len; ++j)
                                      an->grad[static_cast<size_t>(i) * n + start + j] +=
                                          self.grad[static_cast<size_t>(i) * len + j];
                                });
}

// Concatenates rank-2 tensors along columns.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const int m = parts[0].shape()[0];
  int n = 0;
  for (auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != m)
      throw ConfigError("concat_cols: row axis mismatch");
    n += p.shape()[1];
  }
  std::vector<T> value(static_cast<size_t>(m) * n);
  int off = 0;
  for (auto& p : parts) {
    const int w = p.shape()[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        value[static_cast<size_t>(i) * n + off + j] = p.data()[static_cast<size_t>(i) * w + j];
    off += w;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<int> widths;
  for (auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape()[1]);
  }
  return detail::make_result<T>(Shape{m, n}, std::move(value), parts,
                                [nodes, widths, m, n](TensorNode<T>& self) {
                                  int off = 0;
                                  for (size_t pi = 0; pi < nodes.size(); ++pi) {
                                    auto& nd = nodes[pi];
                                    nd->ensure_grad();
                                    const int w = widths[pi];
                                    for (int i = 0; i < m; ++i)
                                      for (int j = 0; j < w; ++j)
                                        nd->grad[static_cast<size_t>(i) * w + j] +=
                                            self.grad[static_cast<size_t>(i) * n + off + j];
                                    off += w;
                                  }
                                });
}

// 2-D matmul: [m,k] x [k,n] -> [m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ConfigError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> value(static_cast<size_t>(m) * n, T(0));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const T x = av[static_cast<size_t>(i) * k + p];
      if (x == T(0)) continue;
      const T* brow = bv.data() + static_cast<size_t>(p) * n;
      T* orow = value.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result<T>(Shape{m, n}, std::move(value), {a, b},
                                [an, bn, m, k, n](TensorNode<T>& self) {
                                  an->ensure_grad();
                                  bn->ensure_grad();
                                  // dA = dY B^T ; dB = A^T dY
                                  for (int i = 0; i < m; ++i)
                                    for (int j = 0; j < n; ++j) {
                                      const T g = self.grad[static_cast<size_t>(i) * n + j];
                                      if (g == T(0)) continue;
                                      for (int p = 0; p < k; ++p) {
                                        an->grad[static_cast<size_t>(i) * k + p] +=
                                            g * bn->value[static_cast<size_t>(p) * n + j];
                                        bn->grad[static_cast<size_t>(p) * n + j] +=
                                            g * an->value[static_cast<size_t>(i) * k + p];
                                      }
                                    }
                                });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw ConfigError("transpose2d: rank != 2");
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> value(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      value[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  auto an = a.node();
  return detail::make_result<T>(Shape{n, m}, std::move(value), {a}, [an, m, n](TensorNode<T>& self) {
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
}

// Softmax along the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const int d = a.shape().back();
  const size_t rows = a.numel() / d;
  std::vector<T> value(a.numel());
  for (size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * d;
    T* y = value.data() + r * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T s = 0;
    for (int i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      s += y[i];
    }
    for (int i = 0; i < d; ++i) y[i] /= s;
  }
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(value), {a}, [an, d, rows](TensorNode<T>& self) {
    an->ensure_grad();
    for (size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T dot = 0;
      for (int i = 0; i < d; ++i) dot += y[i] * g[i];
      for (int i = 0; i < d; ++i) an->grad[r * d + i] += y[i] * (g[i] - dot);
    }
  });
}

// Layer normalization over the last axis, then affine gain/bias (shape [d]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const int d = x.shape().back();
  if (gain.numel() != static_cast<size_t>(d) || bias.numel() != static_cast<size_t>(d))
    throw ConfigError("layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
  const size_t rows = x.numel() / d;
  std::vector<T> value(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> istd(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* xv = x.data().data() + r * d;
    T mu = 0;
    for (int i = 0; i < d; ++i) mu += xv[i];
    mu /= d;
    T var = 0;
    for (int i = 0; i < d; ++i) var += (xv[i] - mu) * (xv[i] - mu);
    var /= d;
    istd[r] = T(1) / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) {
      xhat[r * d + i] = (xv[i] - mu) * istd[r];
      value[r * d + i] = xhat[r * d + i] * gain.data()[i] + bias.data()[i];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
  auto is = std::make_shared<std::vector<T>>(std::move(istd));
  return detail::make_result<T>(
      x.shape(), std::move(value), {x, gain, bias},
      [xn, gn, bn, xh, is, d, rows](TensorNode<T>& self) {
        xn->ensure_grad();
        gn->ensure_grad();
        bn->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* h = xh->data() + r * d;
          T sum_g = 0, sum_gh = 0;
          for (int i = 0; i < d; ++i) {
            const T gg = g[i] * gn->value[i];
            sum_g += gg;
            sum_gh += gg * h[i];
            gn->grad[i] += g[i] * h[i];
            bn->grad[i] += g[i];
          }
          for (int i = 0; i < d; ++i) {
            const T gg = g[i] * gn->value[i];
            xn->grad[r * d + i] += (*is)[r] * (gg - sum_g / d - h[i] * sum_gh / d);
          }
        }
      });
}

// Cross-correlation with zero padding. input [C,H,W], weight [F,C,kh,kw],
// bias [F] -> [F,H',W'] with H' = (H + 2 pad - kh)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
  if (input.shape().size() != 3 || weight.shape().size() != 4)
    throw ConfigError("conv2d: input must be (C,H,W), weight (F,C,kh,kw)");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int F = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != C)
    throw ConfigError("conv2d: channel axis mismatch, input C=" + std::to_string(C) +
                      " weight C=" + std::to_string(weight.shape()[1]));
  if (bias.numel() != static_cast<size_t>(F))
    throw ConfigError("conv2d: bias axis must be F=" + std::to_string(F));
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ConfigError("conv2d: kernel larger than padded input");
  std::vector<T> value(static_cast<size_t>(F) * Ho * Wo);
  const auto& x = input.data();
  const auto& w = weight.data();
  for (int f = 0; f < F; ++f)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        T acc = bias.data()[f];
        const int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= H) continue;
            const T* xrow = x.data() + (static_cast<size_t>(c) * H + iy) * W;
            const T* wrow = w.data() + ((static_cast<size_t>(f) * C + c) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= W) continue;
              acc += xrow[ix] * wrow[kx];
            }
          }
        value[(static_cast<size_t>(f) * Ho + oy) * Wo + ox] = acc;
      }
  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return detail::make_result<T>(
      Shape{F, Ho, Wo}, std::move(value), {input, weight, bias},
      [xn, wn, bn, C, H, W, F, kh, kw, Ho, Wo, stride, pad](TensorNode<T>& self) {
        xn->ensure_grad();
        wn->ensure_grad();
        bn->ensure_grad();
        for (int f = 0; f < F; ++f)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const T g = self.grad[(static_cast<size_t>(f) * Ho + oy) * Wo + ox];
              if (g == T(0)) continue;
              bn->grad[f] += g;
              const int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
              for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= H) continue;
                  T* xg = xn->grad.data() + (static_cast<size_t>(c) * H + iy) * W;
                  const T* xv = xn->value.data() + (static_cast<size_t>(c) * H + iy) * W;
                  T* wg = wn->grad.data() + ((static_cast<size_t>(f) * C + c) * kh + ky) * kw;
                  const T* wv = wn->value.data() + ((static_cast<size_t>(f) * C + c) * kh + ky) * kw;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= W) continue;
                    xg[ix] += g * wv[kx];
                    wg[kx] += g * xv[ix];
                  }
                }
            }
      });
}

// Max pooling on [C,H,W]; gradient routed to the first argmax occurrence.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int kernel, int stride) {
  if (input.shape().size() != 3) throw ConfigError("maxpool2d: input must be (C,H,W)");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (kernel > H || kernel > W)
    throw ConfigError("maxpool2d: kernel " + std::to_string(kernel) + " larger than input " +
                      shape_str(input.shape()));
  const int Ho = (H - kernel) / stride + 1;
  const int Wo = (W - kernel) / stride + 1;
  std::vector<T> value(static_cast<size_t>(C) * Ho * Wo);
  auto argmax = std::make_shared<std::vector<size_t>>(value.size());
  const auto& x = input.data();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        size_t best = (static_cast<size_t>(c) * H + oy * stride) * W + ox * stride;
        T bv = x[best];
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const size_t idx =
                (static_cast<size_t>(c) * H + oy * stride + ky) * W + ox * stride + kx;
            if (x[idx] > bv) {
              bv = x[idx];
              best = idx;
            }
          }
        const size_t o = (static_cast<size_t>(c) * Ho + oy) * Wo + ox;
        value[o] = bv;
        (*argmax)[o] = best;
      }
  auto xn = input.node();
  return detail::make_result<T>(Shape{C, Ho, Wo}, std::move(value), {input},
                                [xn, argmax](TensorNode<T>& self) {
                                  xn->ensure_grad();
                                  for (size_t o = 0; o < self.value.size(); ++o)
                                    xn->grad[(*argmax)[o]] += self.grad[o];
                                });
}

// Places an (R x R) patch into an (H x W) zero canvas at (row, col).
template <typename T>
Tensor<T> embed_patch(const Tensor<T>& patch, int H, int W, int row, int col) {
  if (patch.shape().size() != 2) throw ConfigError("embed_patch: patch must be 2-D");
  const int R = patch.shape()[0], Rc = patch.shape()[1];
  if (row < 0 || col < 0 || row + R > H || col + Rc > W)
    throw ConfigError("embed_patch: patch out of canvas");
  std::vector<T> value(static_cast<size_t>(H) * W, T(0));
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < Rc; ++c)
      value[static_cast<size_t>(row + r) * W + col + c] = patch.data()[static_cast<size_t>(r) * Rc + c];
  auto pn = patch.node();
  return detail::make_result<T>(Shape{H, W}, std::move(value), {patch},
                                [pn, H, W, R, Rc, row, col](TensorNode<T>& self) {
                                  pn->ensure_grad();
                                  for (int r = 0; r < R; ++r)
                                    for (int c = 0; c < Rc; ++c)
                                      pn->grad[static_cast<size_t>(r) * Rc + c] +=
                                          self.grad[static_cast<size_t>(row + r) * W + col + c];
                                });
}

}  // namespace ctbound
