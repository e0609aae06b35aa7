#pragma once

// Reverse-mode automatic differentiation over duet::Tensor.
//
// A Var is a handle to a graph node. Leaves created with parameter() collect
// gradients across backward() calls until zero_grad(); interior nodes are
// recomputed on every backward() so repeated calls accumulate only at leaves.

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "duet/tensor.hpp"

namespace duet {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = g;
      has_grad = true;
      return;
    }
    auto dst = grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad; }

  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  Tensor grad() const { return node_->has_grad ? node_->grad : Tensor(node_->value.shape()); }

  void zero_grad() {
    node_->has_grad = false;
    node_->grad = Tensor();
  }

  /// Leaf-only in-place update, used by optimizers.
  Tensor& mutable_value() {
    if (!node_->is_leaf) throw ContractError("mutable_value() on an interior graph node");
    return node_->value;
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Leaf that does not receive gradients.
inline Var constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

/// Leaf that receives gradients.
inline Var parameter(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->is_leaf = false;
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

template <typename F>
Var unary(const Var& x, F&& f, std::function<double(double x, double y)> dfdx) {
  Tensor out(x.shape());
  auto in = x.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return make_node(std::move(out), {x}, [dfdx = std::move(dfdx)](Node& self) {
    Node& p = *self.parents[0];
    Tensor g(p.value.shape());
    auto gi = g.values();
    auto go = self.grad.values();
    auto xv = p.value.values();
    auto yv = self.value.values();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = go[i] * dfdx(xv[i], yv[i]);
    p.accumulate(g);
  });
}

inline void check_binary(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape() && !a.value().is_scalar() && !b.value().is_scalar())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Reduces an upstream gradient onto an operand that may have been scalar-broadcast.
inline Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (g.shape() == like.shape()) return g;
  double s = 0.0;
  for (double v : g.values()) s += v;
  Tensor out(like.shape());
  out[0] = s;
  return out;
}

template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F&& f) {
  const bool a_small = a.shape() != b.shape() && a.is_scalar();
  const bool b_small = a.shape() != b.shape() && b.is_scalar();
  Tensor out(a_small ? b.shape() : a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a_small ? a[0] : a[i], b_small ? b[0] : b[i]);
  return out;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return detail::make_node(std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(kernels::matmul_nt(self.grad, pb.value));
    if (pb.requires_grad) pb.accumulate(kernels::matmul_tn(pa.value, self.grad));
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_binary(a, b, "add");
  Tensor out = detail::broadcast_apply(a.value(), b.value(), [](double x, double y) { return x + y; });
  return detail::make_node(std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(detail::reduce_to(self.grad, p->value));
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_binary(a, b, "sub");
  Tensor out = detail::broadcast_apply(a.value(), b.value(), [](double x, double y) { return x - y; });
  return detail::make_node(std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(detail::reduce_to(self.grad, pa.value));
    if (pb.requires_grad) {
      Tensor neg = self.grad;
      for (double& v : neg.values()) v = -v;
      pb.accumulate(detail::reduce_to(neg, pb.value));
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_binary(a, b, "mul");
  Tensor out = detail::broadcast_apply(a.value(), b.value(), [](double x, double y) { return x * y; });
  return detail::make_node(std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    auto times = [](double x, double y) { return x * y; };
    if (pa.requires_grad)
      pa.accumulate(detail::reduce_to(detail::broadcast_apply(self.grad, pb.value, times), pa.value));
    if (pb.requires_grad)
      pb.accumulate(detail::reduce_to(detail::broadcast_apply(self.grad, pa.value, times), pb.value));
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

inline Var scale(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// max(0, x); same rule as relu, kept separate so hinge losses read naturally.
inline Var max0(const Var& x) { return relu(x); }

inline Var tanh(const Var& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  for (double v : x.value().values())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var abs(const Var& x) {
  return detail::unary(x, [](double v) { return std::fabs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var add_bias(const Var& x, const Var& bias) {
  Tensor out = kernels::add_bias(x.value(), bias.value());
  return detail::make_node(std::move(out), {x, bias}, [](detail::Node& self) {
    detail::Node& px = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (px.requires_grad) px.accumulate(self.grad);
    if (pb.requires_grad) {
      Tensor gb(pb.value.shape());
      const std::size_t n = gb.size();
      auto g = self.grad.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      pb.accumulate(gb);
    }
  });
}

/// Per-column affine map y = shift + scale * x, clamped to [lo, hi] column-wise.
/// The clamp only guards against rounding; the gradient is the affine one.
inline Var affine_columns(const Var& x, const Tensor& scale_by, const Tensor& shift, const Tensor& lo,
                          const Tensor& hi) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || scale_by.size() != xv.cols() || shift.size() != xv.cols() ||
      lo.size() != xv.cols() || hi.size() != xv.cols())
    throw DimensionError("affine_columns: width mismatch for input " + shape_str(xv.shape()));
  Tensor out(xv.shape());
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % n;
    out[i] = std::clamp(shift[c] + scale_by[c] * xv[i], lo[c], hi[c]);
  }
  return detail::make_node(std::move(out), {x}, [scale_by](detail::Node& self) {
    Tensor g = self.grad;
    const std::size_t n = scale_by.size();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale_by[i % n];
    self.parents[0]->accumulate(g);
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return detail::make_node(Tensor::scalar(s), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    p.accumulate(Tensor(p.value.shape(), self.grad.item()));
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Sums each row of x[m x n] into a column [m x 1].
inline Var row_sum(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out({xv.rows(), 1});
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (double v : xv.row(r)) out(r, 0) += v;
  return detail::make_node(std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    Tensor g(p.value.shape());
    const std::size_t n = g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i / n];
    p.accumulate(g);
  });
}

inline Var softmax(const Var& logits) {
  Tensor out = kernels::softmax(logits.value());
  return detail::make_node(std::move(out), {logits}, [](detail::Node& self) {
    // dL/dx_j = y_j (g_j - sum_k g_k y_k)
    const Tensor& y = self.value;
    Tensor g(y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = self.grad.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      auto out = g.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] = yr[c] * (gr[c] - dot);
    }
    self.parents[0]->accumulate(g);
  });
}

inline Var log_softmax(const Var& logits) {
  Tensor out = kernels::log_softmax(logits.value());
  return detail::make_node(std::move(out), {logits}, [](detail::Node& self) {
    // dL/dx_j = g_j - softmax_j * sum_k g_k
    const Tensor& ly = self.value;
    Tensor g(ly.shape());
    for (std::size_t r = 0; r < ly.rows(); ++r) {
      auto lr = ly.row(r);
      auto gr = self.grad.row(r);
      double total = 0.0;
      for (double v : gr) total += v;
      auto out = g.row(r);
      for (std::size_t c = 0; c < lr.size(); ++c) out[c] = gr[c] - std::exp(lr[c]) * total;
    }
    self.parents[0]->accumulate(g);
  });
}

/// Batch normalization without affine parameters. For y = (x - mu) * s:
/// dx = s * (g - mean(g) - y * mean(g * y)), columnwise.
inline Var batch_standardize(const Var& x, double eps = 1e-5) {
  auto inv_std = std::make_shared<std::vector<double>>();
  Tensor out = kernels::batch_standardize(x.value(), eps, inv_std.get());
  return detail::make_node(std::move(out), {x}, [inv_std](detail::Node& self) {
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    const std::size_t m = y.rows(), n = y.cols();
    std::vector<double> mg(n, 0.0), mgy(n, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        mg[c] += g(r, c);
        mgy[c] += g(r, c) * y(r, c);
      }
    Tensor dx({m, n});
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c)
        dx(r, c) = (*inv_std)[c] * (g(r, c) - mg[c] * inv_m - y(r, c) * mgy[c] * inv_m);
    self.parents[0]->accumulate(dx);
  });
}

namespace detail {

inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace detail

/// Vector-Jacobian product: propagates `seed` (shaped like `out`) to every
/// reachable leaf created with parameter().
inline void backward(const Var& out, const Tensor& seed) {
  if (seed.shape() != out.shape())
    throw DimensionError("backward: seed shape " + shape_str(seed.shape()) + " does not match output " +
                         shape_str(out.shape()));
  if (!out.requires_grad()) return;
  auto order = detail::topo_order(out.node().get());
  for (auto* n : order)
    if (!n->is_leaf) {
      n->has_grad = false;
      n->grad = Tensor();
    }
  out.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf && n->has_grad && n->backward) n->backward(*n);
  }
}

/// Populates dLoss/dLeaf for a scalar loss. Gradients accumulate at leaves.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  backward(loss, Tensor(loss.shape(), 1.0));
}

}  // namespace duet
