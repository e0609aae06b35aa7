#pragma once

// Training losses. Per-sample forms return a [b x 1] column; the batch forms
// average it. Classifier-side inputs are raw logits unless stated otherwise.

#include <cmath>
#include <string>

#include "duet/autograd.hpp"
#include "duet/tensor.hpp"

namespace duet {

enum class LossKind { l1, kl, ce, multi_margin };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::l1: return "l1";
    case LossKind::kl: return "kl";
    case LossKind::ce: return "ce";
    case LossKind::multi_margin: return "multi_margin";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "kl") return LossKind::kl;
  if (s == "ce") return LossKind::ce;
  if (s == "multi_margin") return LossKind::multi_margin;
  throw ContractError("unknown loss '" + s + "'");
}

inline constexpr double kKlFloor = 1e-12;

namespace detail {

inline void require_one_hot(const Tensor& t, const char* op) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    int ones = 0;
    for (double v : t.row(r)) {
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        throw ContractError(std::string(op) + ": row " + std::to_string(r) + " is not one-hot");
    }
    if (ones != 1) throw ContractError(std::string(op) + ": row " + std::to_string(r) + " is not one-hot");
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Var batch_mean(const Var& per_sample) { return mean(per_sample); }

}  // namespace detail

/// sum_c |p - q| per row.
inline Var l1_per_sample(const Var& p, const Var& q) {
  detail::require_same(p.shape(), q.shape(), "l1_loss");
  return row_sum(abs(p - q));
}

/// Mean over the batch of sum_c |p - q|.
inline Var l1_loss(const Var& p, const Tensor& q) { return detail::batch_mean(l1_per_sample(p, constant(q))); }

/// -log softmax(logits)[label] per row, via log-sum-exp.
inline Var ce_per_sample(const Var& logits, const Tensor& hard) {
  detail::require_same(logits.shape(), hard.shape(), "ce_loss");
  detail::require_one_hot(hard, "ce_loss");
  return scale(row_sum(log_softmax(logits) * constant(hard)), -1.0);
}

inline Var ce_loss(const Var& logits, const Tensor& hard) { return detail::batch_mean(ce_per_sample(logits, hard)); }

/// (1/C) sum_{j != y} max(0, margin - z_y + z_j) per row.
inline Var multi_margin_per_sample(const Var& logits, const Tensor& hard, double margin = 1.0) {
  detail::require_same(logits.shape(), hard.shape(), "multi_margin_loss");
  detail::require_one_hot(hard, "multi_margin_loss");
  const std::size_t c = hard.cols();
  // Multiplying the masked logits by an all-ones matrix copies z_y into every column.
  Var true_logit = matmul(logits * constant(hard), constant(Tensor({c, c}, 1.0)));
  Tensor others = hard;
  for (double& v : others.values()) v = 1.0 - v;
  Var hinge = max0(add_scalar(logits - true_logit, margin)) * constant(others);
  return scale(row_sum(hinge), 1.0 / static_cast<double>(c));
}

inline Var multi_margin_loss(const Var& logits, const Tensor& hard, double margin = 1.0) {
  return detail::batch_mean(multi_margin_per_sample(logits, hard, margin));
}

/// KL(q || softmax(p_logits)) per row, with q floored at 1e-12 inside its log.
inline Var kl_per_sample(const Var& p_logits, const Tensor& q) {
  detail::require_same(p_logits.shape(), q.shape(), "kl_loss");
  for (std::size_t r = 0; r < q.rows(); ++r) {
    double s = 0.0;
    for (double v : q.row(r)) {
      if (v < 0.0) throw ContractError("kl_loss: negative probability in row " + std::to_string(r));
      s += v;
    }
    if (std::fabs(s - 1.0) > 1e-6) throw ContractError("kl_loss: row " + std::to_string(r) + " is not normalized");
  }
  Tensor q_log_q(q.shape());
  for (std::size_t i = 0; i < q.size(); ++i) q_log_q[i] = q[i] * std::log(std::max(q[i], kKlFloor));
  Var cross = log_softmax(p_logits) * constant(q);
  return row_sum(constant(q_log_q) - cross);
}

inline Var kl_loss(const Var& p_logits, const Tensor& q) { return detail::batch_mean(kl_per_sample(p_logits, q)); }

/// Negative l1 distance between the two students' probability outputs.
/// Minimizing it pushes the students apart.
inline Var generator_loss_ds(const Var& s1, const Var& s2) {
  detail::require_same(s1.shape(), s2.shape(), "generator_loss_ds");
  return scale(detail::batch_mean(l1_per_sample(s1, s2)), -1.0);
}

/// Student loss of `kind` between student logits and a target-output tensor
/// (probabilities in soft mode, one-hot rows in hard mode). l1 compares
/// probabilities, so the student's logits are softmaxed first.
inline Var student_loss_per_sample(LossKind kind, const Var& logits, const Tensor& target, double margin = 1.0) {
  switch (kind) {
    case LossKind::l1: return l1_per_sample(softmax(logits), constant(target));
    case LossKind::kl: return kl_per_sample(logits, target);
    case LossKind::ce: return ce_per_sample(logits, target);
    case LossKind::multi_margin: return multi_margin_per_sample(logits, target, margin);
  }
  throw ContractError("student_loss: unknown kind");
}

inline Var student_loss(LossKind kind, const Var& logits, const Tensor& target, double margin = 1.0) {
  return detail::batch_mean(student_loss_per_sample(kind, logits, target, margin));
}

/// Loss between two models' outputs where both sides may carry gradients.
/// l1 compares probabilities; ce and multi_margin use the argmax of `reference`
/// as a constant label, so only `logits` is differentiated; kl differentiates both.
inline Var paired_loss_per_sample(LossKind kind, const Var& logits, const Var& reference_logits, double margin = 1.0) {
  detail::require_same(logits.shape(), reference_logits.shape(), "paired_loss");
  const std::size_t c = logits.value().cols();
  switch (kind) {
    case LossKind::l1: return l1_per_sample(softmax(logits), softmax(reference_logits));
    case LossKind::ce:
      return ce_per_sample(logits, kernels::one_hot(kernels::argmax_rows(reference_logits.value()), c));
    case LossKind::multi_margin:
      return multi_margin_per_sample(logits, kernels::one_hot(kernels::argmax_rows(reference_logits.value()), c),
                                     margin);
    case LossKind::kl: {
      Var q = softmax(reference_logits);
      return row_sum(q * (log_softmax(reference_logits) - log_softmax(logits)));
    }
  }
  throw ContractError("paired_loss: unknown kind");
}

}  // namespace duet
