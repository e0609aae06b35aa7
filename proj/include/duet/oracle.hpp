#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "duet/nets.hpp"
#include "duet/tensor.hpp"

namespace duet {

enum class LabelMode { soft, hard };

inline const char* to_string(LabelMode m) { return m == LabelMode::soft ? "soft" : "hard"; }

inline LabelMode parse_label_mode(const std::string& s) {
  if (s == "soft") return LabelMode::soft;
  if (s == "hard") return LabelMode::hard;
  throw ContractError("unknown label mode '" + s + "'");
}

enum class Phase { student_train, generator_grad_est, eval_excluded };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::student_train: return "student_train";
    case Phase::generator_grad_est: return "generator_grad_est";
    case Phase::eval_excluded: return "eval_excluded";
  }
  return "?";
}

/// Per-sample count of target queries. Evaluation queries are tracked under
/// eval_excluded but do not count toward the total.
struct QueryLedger {
  std::uint64_t total_samples = 0;
  std::map<std::string, std::uint64_t> by_phase{
      {"student_train", 0}, {"generator_grad_est", 0}, {"eval_excluded", 0}};

  void record(Phase phase, std::uint64_t samples) {
    by_phase[to_string(phase)] += samples;
    if (phase != Phase::eval_excluded) total_samples += samples;
  }

  std::uint64_t phase(Phase p) const { return by_phase.at(to_string(p)); }

  bool consistent() const {
    return total_samples == phase(Phase::student_train) + phase(Phase::generator_grad_est);
  }

  bool operator==(const QueryLedger&) const = default;
};

/// Thrown when a query would take the ledger past its budget.
class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted(const QueryLedger& snapshot, std::uint64_t requested, std::uint64_t budget)
      : std::runtime_error("query budget exhausted: " + std::to_string(snapshot.total_samples) + " used + " +
                           std::to_string(requested) + " requested > " + std::to_string(budget)),
        ledger(snapshot) {}
  QueryLedger ledger;
};

/// Black-box access to a target classifier. Callers see only output
/// probabilities or labels; the target itself is an opaque callable that
/// returns logits.
class Oracle {
 public:
  using TargetFn = std::function<Tensor(const Tensor&)>;

  Oracle(TargetFn target, std::size_t num_classes, LabelMode mode,
         std::optional<std::uint64_t> budget = std::nullopt)
      : target_(std::move(target)), num_classes_(num_classes), mode_(mode), budget_(budget) {
    if (num_classes_ < 2) throw ContractError("Oracle: need at least 2 classes");
  }

  /// Wraps a network; the oracle keeps its own private copy.
  static Oracle from_mlp(const Mlp& target, LabelMode mode, std::optional<std::uint64_t> budget = std::nullopt) {
    auto net = std::make_shared<const Mlp>(target);
    const std::size_t c = net->out_dim();
    return Oracle([net](const Tensor& x) { return predict(*net, x); }, c, mode, budget);
  }

  Oracle(Oracle&& o) noexcept
      : target_(std::move(o.target_)),
        num_classes_(o.num_classes_),
        mode_(o.mode_),
        budget_(o.budget_),
        ledger_(std::move(o.ledger_)) {}

  /// Soft mode: softmax probabilities. Hard mode: one-hot of the argmax
  /// (ties to the lowest class). The result carries no gradient history.
  Tensor query(const Tensor& x, Phase phase) {
    Tensor logits = checked_call(x, phase);
    if (mode_ == LabelMode::soft) return kernels::softmax(logits);
    return kernels::one_hot(kernels::argmax_rows(logits), num_classes_);
  }

  /// Raw target class ids, for callers that do not know the class count.
  /// Only meaningful in hard mode but costs the same as query().
  std::vector<std::size_t> query_labels(const Tensor& x, Phase phase) {
    return kernels::argmax_rows(checked_call(x, phase));
  }

  QueryLedger ledger() const {
    std::lock_guard lock(mu_);
    return ledger_;
  }

  std::optional<std::uint64_t> budget() const { return budget_; }

  /// Training queries still available; nullopt when unlimited.
  std::optional<std::uint64_t> remaining() const {
    if (!budget_) return std::nullopt;
    std::lock_guard lock(mu_);
    return *budget_ - std::min(*budget_, ledger_.total_samples);
  }

  LabelMode mode() const { return mode_; }
  std::size_t num_classes() const { return num_classes_; }

 private:
  Tensor checked_call(const Tensor& x, Phase phase) {
    if (x.rank() != 2) throw DimensionError("Oracle::query: expected a batch matrix, got " + shape_str(x.shape()));
    const std::uint64_t n = x.rows();
    {
      std::lock_guard lock(mu_);
      if (phase != Phase::eval_excluded && budget_ && ledger_.total_samples + n > *budget_)
        throw BudgetExhausted(ledger_, n, *budget_);
      ledger_.record(phase, n);
    }
    Tensor logits = target_(x);
    if (logits.rank() != 2 || logits.rows() != x.rows() || logits.cols() != num_classes_)
      throw DimensionError("Oracle: target returned shape " + shape_str(logits.shape()));
    return logits;
  }

  TargetFn target_;
  std::size_t num_classes_;
  LabelMode mode_;
  std::optional<std::uint64_t> budget_;
  mutable std::mutex mu_;
  QueryLedger ledger_;
};

/// Fraction of rows where argmax(net) equals the target's argmax. Queries are
/// logged as eval_excluded and consume no budget.
inline double eval_agreement(Oracle& oracle, const Mlp& net, const Tensor& xs) {
  if (xs.rank() != 2) throw ContractError("eval_agreement: expected a batch matrix");
  const auto truth = oracle.query_labels(xs, Phase::eval_excluded);
  const auto pred = predict_labels(net, xs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace duet
