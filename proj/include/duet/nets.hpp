#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "duet/autograd.hpp"
#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet {

enum class Activation { relu, tanh, none };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::none: return "none";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "none") return Activation::none;
  throw ContractError("unknown activation '" + s + "'");
}

/// Classifiers end in raw logits; generators end in tanh rescaled into the box [lo, hi].
struct OutputHead {
  enum class Kind { logits, bounded } kind = Kind::logits;
  Tensor lo;  // bounded only, one entry per output
  Tensor hi;
};

struct Layer {
  Var weight;  // [in x out]
  Var bias;    // [out]
  Activation activation = Activation::none;
  bool batch_norm = false;  // standardize pre-activations over the batch
};

/// Feed-forward network. Copies are deep: a copy never shares parameters or
/// gradients with its source.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Layer> layers, OutputHead head, std::uint64_t seed = 0)
      : layers_(std::move(layers)), head_(std::move(head)), seed_(seed) {
    validate();
  }

  Mlp(const Mlp& other) : head_(other.head_), seed_(other.seed_) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_)
      layers_.push_back({parameter(l.weight.value()), parameter(l.bias.value()), l.activation, l.batch_norm});
  }
  Mlp& operator=(const Mlp& other) {
    if (this != &other) {
      Mlp tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const OutputHead& head() const { return head_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t in_dim() const { return layers_.front().weight.value().rows(); }
  std::size_t out_dim() const { return layers_.back().weight.value().cols(); }

  /// Parameters in a fixed order: w0, b0, w1, b1, ...
  std::vector<Var> parameters() const {
    std::vector<Var> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  void validate() const {
    if (layers_.empty()) throw ContractError("Mlp: no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Tensor& w = layers_[i].weight.value();
      const Tensor& b = layers_[i].bias.value();
      if (w.rank() != 2 || b.size() != w.cols())
        throw DimensionError("Mlp: layer " + std::to_string(i) + " has weight " + shape_str(w.shape()) +
                             " and bias " + shape_str(b.shape()));
      if (i > 0 && layers_[i - 1].weight.value().cols() != w.rows())
        throw DimensionError("Mlp: layer " + std::to_string(i) + " input " + std::to_string(w.rows()) +
                             " does not chain with previous output " +
                             std::to_string(layers_[i - 1].weight.value().cols()));
      if (!w.all_finite() || !b.all_finite()) throw DomainError("Mlp: non-finite parameter");
    }
    if (head_.kind == OutputHead::Kind::bounded) {
      if (head_.lo.size() != out_dim() || head_.hi.size() != out_dim())
        throw DimensionError("Mlp: bounded head box does not match output width");
      for (std::size_t i = 0; i < head_.lo.size(); ++i)
        if (!(head_.lo[i] <= head_.hi[i])) throw ContractError("Mlp: bounded head with lo > hi");
    }
  }

 private:
  std::vector<Layer> layers_;
  OutputHead head_;
  std::uint64_t seed_ = 0;
};

namespace detail {

inline Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return rng.uniform_tensor({in, out}, -bound, bound);
}

inline std::vector<Layer> glorot_layers(const std::vector<std::size_t>& dims, Activation hidden,
                                        Activation last, std::uint64_t seed) {
  if (dims.size() < 2) throw ContractError("init_mlp: need at least input and output dims");
  for (auto d : dims)
    if (d == 0) throw ContractError("init_mlp: zero-width layer");
  Rng rng(seed);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool is_last = i + 2 == dims.size();
    layers.push_back({parameter(glorot(dims[i], dims[i + 1], rng)), parameter(Tensor({dims[i + 1]})),
                      is_last ? last : hidden});
  }
  return layers;
}

}  // namespace detail

/// Classifier with Glorot-uniform weights and zero biases, ending in raw logits.
inline Mlp init_mlp(const std::vector<std::size_t>& dims, Activation hidden, std::uint64_t seed) {
  return Mlp(detail::glorot_layers(dims, hidden, Activation::none, seed), OutputHead{}, seed);
}

/// Generator whose outputs are tanh-squashed into the box [lo, hi]. With
/// batch_norm, every layer's pre-activation is standardized over the batch,
/// so outputs depend on the whole latent batch.
inline Mlp init_generator(const std::vector<std::size_t>& dims, Activation hidden, Tensor lo, Tensor hi,
                          std::uint64_t seed, bool batch_norm = false) {
  OutputHead head{OutputHead::Kind::bounded, std::move(lo), std::move(hi)};
  auto layers = detail::glorot_layers(dims, hidden, Activation::tanh, seed);
  for (auto& l : layers) l.batch_norm = batch_norm;
  return Mlp(std::move(layers), std::move(head), seed);
}

namespace detail {

inline void head_affine(const OutputHead& head, Tensor& scale_by, Tensor& shift) {
  const std::size_t n = head.lo.size();
  scale_by = Tensor({n});
  shift = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) {
    scale_by[i] = 0.5 * (head.hi[i] - head.lo[i]);
    shift[i] = 0.5 * (head.hi[i] + head.lo[i]);
  }
}

inline Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::none: return x;
  }
  return x;
}

}  // namespace detail

/// Differentiable forward pass; gradients flow into the network's parameters
/// and into `x` when it requires them.
inline Var forward(const Mlp& net, const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != net.in_dim())
    throw DimensionError("forward: input " + shape_str(xv.shape()) + " does not match network width " +
                         std::to_string(net.in_dim()));
  Var h = x;
  for (const auto& l : net.layers()) {
    h = add_bias(matmul(h, l.weight), l.bias);
    if (l.batch_norm) h = batch_standardize(h);
    h = detail::activate(h, l.activation);
  }
  if (net.head().kind == OutputHead::Kind::bounded) {
    Tensor s, t;
    detail::head_affine(net.head(), s, t);
    h = affine_columns(h, s, t, net.head().lo, net.head().hi);
  }
  return h;
}

inline Var forward(const Mlp& net, const Tensor& x) { return forward(net, constant(x)); }

/// Value-only forward pass; bit-identical to forward() but builds no graph.
inline Tensor predict(const Mlp& net, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != net.in_dim())
    throw DimensionError("predict: input " + shape_str(x.shape()) + " does not match network width " +
                         std::to_string(net.in_dim()));
  Tensor h = x;
  for (const auto& l : net.layers()) {
    h = kernels::add_bias(kernels::matmul(h, l.weight.value()), l.bias.value());
    if (l.batch_norm) h = kernels::batch_standardize(h, 1e-5);
    if (l.activation == Activation::relu)
      for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    else if (l.activation == Activation::tanh)
      for (double& v : h.values()) v = std::tanh(v);
  }
  if (net.head().kind == OutputHead::Kind::bounded) {
    Tensor s, t;
    detail::head_affine(net.head(), s, t);
    const auto& lo = net.head().lo;
    const auto& hi = net.head().hi;
    const std::size_t n = h.cols();
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::size_t c = i % n;
      h[i] = std::clamp(t[c] + s[c] * h[i], lo[c], hi[c]);
    }
  }
  return h;
}

/// Softmax probabilities of a classifier.
inline Tensor predict_proba(const Mlp& net, const Tensor& x) { return kernels::softmax(predict(net, x)); }

inline std::vector<std::size_t> predict_labels(const Mlp& net, const Tensor& x) {
  return kernels::argmax_rows(predict(net, x));
}

/// SGD with heavy-ball momentum and L2 weight decay.
struct SgdState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Tensor> velocity;  // mirrors Mlp::parameters(); empty until the first step
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v; then zero grads.
inline void sgd_step(Mlp& net, SgdState& state) {
  if (!(state.lr >= 0.0)) throw ContractError("sgd_step: learning rate must be non-negative");
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].has_grad())
      throw ContractError("sgd_step: parameter " + std::to_string(i) + " has no gradient; call backward first");
  if (state.velocity.empty())
    for (const auto& p : params) state.velocity.emplace_back(p.value().shape());
  if (state.velocity.size() != params.size()) throw ContractError("sgd_step: velocity does not mirror network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = state.velocity[i];
    Tensor& w = params[i].mutable_value();
    if (v.shape() != w.shape()) throw ContractError("sgd_step: velocity shape mismatch");
    const Tensor g = params[i].grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = state.momentum * v[k] + g[k] + state.weight_decay * w[k];
      w[k] -= state.lr * v[k];
    }
    params[i].zero_grad();
  }
}

/// Exponential moving average of a network's parameters.
struct EmaState {
  double decay = 0.9;
  std::vector<Tensor> shadow;  // mirrors Mlp::parameters()
};

inline EmaState ema_init(const Mlp& net, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ContractError("ema_init: decay must lie in [0, 1)");
  EmaState ema{decay, {}};
  for (const auto& p : net.parameters()) ema.shadow.push_back(p.value());
  return ema;
}

/// shadow <- decay*shadow + (1 - decay)*param
inline void ema_update(EmaState& ema, const Mlp& net) {
  auto params = net.parameters();
  if (params.size() != ema.shadow.size()) throw ContractError("ema_update: shadow does not mirror network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].value();
    Tensor& s = ema.shadow[i];
    if (p.shape() != s.shape()) throw ContractError("ema_update: shape mismatch at parameter " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) s[k] = ema.decay * s[k] + (1.0 - ema.decay) * p[k];
  }
}

/// Copy of `net` carrying the shadow parameters; `net` is left untouched.
inline Mlp ema_apply(const EmaState& ema, const Mlp& net) {
  Mlp out(net);
  auto params = out.parameters();
  if (params.size() != ema.shadow.size()) throw ContractError("ema_apply: shadow does not mirror network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value().shape() != ema.shadow[i].shape())
      throw ContractError("ema_apply: shape mismatch at parameter " + std::to_string(i));
    params[i].mutable_value() = ema.shadow[i];
  }
  return out;
}

namespace detail {

inline Tensor append_column(const Tensor& w, const Tensor& column) {
  const std::size_t r = w.rows(), c = w.cols();
  Tensor out({r, c + 1});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) = w(i, j);
    out(i, c) = column[i];
  }
  return out;
}

inline Tensor append_entry(const Tensor& b, double v) {
  std::vector<double> data(b.values().begin(), b.values().end());
  data.push_back(v);
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

}  // namespace detail

/// Adds one output unit to a classifier. Existing weights are preserved; the
/// new weight column is Glorot-uniform for the grown layer and its bias is 0.
/// Optimizer and EMA state, when given, grow alongside.
inline void grow_output(Mlp& net, Rng& rng, SgdState* sgd = nullptr, EmaState* ema = nullptr) {
  if (net.head().kind != OutputHead::Kind::logits) throw ContractError("grow_output: only classifiers can grow");
  Layer& last = net.layers().back();
  const std::size_t in = last.weight.value().rows();
  const std::size_t out = last.weight.value().cols() + 1;
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor column = rng.uniform_tensor({in}, -bound, bound);
  last.weight = parameter(detail::append_column(last.weight.value(), column));
  last.bias = parameter(detail::append_entry(last.bias.value(), 0.0));
  const std::size_t wi = 2 * (net.layers().size() - 1);
  if (sgd && !sgd->velocity.empty()) {
    sgd->velocity[wi] = detail::append_column(sgd->velocity[wi], Tensor({in}));
    sgd->velocity[wi + 1] = detail::append_entry(sgd->velocity[wi + 1], 0.0);
  }
  if (ema) {
    ema->shadow[wi] = detail::append_column(ema->shadow[wi], column);
    ema->shadow[wi + 1] = detail::append_entry(ema->shadow[wi + 1], 0.0);
  }
}

}  // namespace duet
