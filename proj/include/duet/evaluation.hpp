#pragma once

// Measurements: input-gradient fidelity of a surrogate, class balance of a
// generator, and queries-to-accuracy tables.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "duet/losses.hpp"
#include "duet/metrics.hpp"
#include "duet/nets.hpp"
#include "duet/oracle.hpp"
#include "duet/zeroth_order.hpp"

namespace duet {

/// How each gradient is normalized before taking the distance.
/// gradient:   g / ||g||              (distances in [0, 2])
/// loss_value: grad of L / |L| with the denominator held fixed, i.e. g / |L|
enum class GradNormalization { gradient, loss_value };

inline const char* to_string(GradNormalization n) { return n == GradNormalization::gradient ? "gradient" : "loss_value"; }

inline GradNormalization parse_grad_normalization(const std::string& s) {
  if (s == "gradient") return GradNormalization::gradient;
  if (s == "loss_value") return GradNormalization::loss_value;
  throw ContractError("unknown gradient normalization '" + s + "'");
}

inline constexpr double kZeroGradient = 1e-12;

struct GradFidelityReport {
  std::vector<double> distances;
  double mean = 0.0;
  double median = 0.0;
  std::size_t excluded = 0;  // samples with a vanishing gradient or loss
};

/// Per-row distance between two gradient batches. `loss_true` and `loss_est`
/// ([b x 1]) are only read in loss_value mode.
inline GradFidelityReport fidelity_from_gradients(const Tensor& g_true, const Tensor& g_est,
                                                  GradNormalization mode = GradNormalization::gradient,
                                                  const Tensor* loss_true = nullptr, const Tensor* loss_est = nullptr) {
  if (g_true.shape() != g_est.shape())
    throw DimensionError("grad_fidelity: gradient shapes " + shape_str(g_true.shape()) + " and " +
                         shape_str(g_est.shape()) + " differ");
  if (mode == GradNormalization::loss_value && (!loss_true || !loss_est))
    throw ContractError("grad_fidelity: loss_value normalization needs the per-sample losses");
  GradFidelityReport rep;
  for (std::size_t r = 0; r < g_true.rows(); ++r) {
    double na = 0.0, nb = 0.0;
    for (double v : g_true.row(r)) na += v * v;
    for (double v : g_est.row(r)) nb += v * v;
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (mode == GradNormalization::loss_value) {
      na = std::fabs((*loss_true)[r]);
      nb = std::fabs((*loss_est)[r]);
    }
    if (na < kZeroGradient || nb < kZeroGradient) {
      ++rep.excluded;
      continue;
    }
    double d = 0.0;
    for (std::size_t c = 0; c < g_true.cols(); ++c) {
      const double diff = g_true(r, c) / na - g_est(r, c) / nb;
      d += diff * diff;
    }
    rep.distances.push_back(std::sqrt(d));
  }
  if (!rep.distances.empty()) {
    double s = 0.0;
    for (double v : rep.distances) s += v;
    rep.mean = s / static_cast<double>(rep.distances.size());
    std::vector<double> sorted = rep.distances;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    rep.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return rep;
}

/// Per-sample input gradient of L(student(x), reference(x)), differentiating
/// through both networks. Returns the gradients and writes per-sample losses.
inline Tensor paired_input_gradient(const Mlp& student, const Mlp& reference, const Tensor& xs, LossKind kind,
                                    double loss_scale = 1.0, Tensor* losses = nullptr, double margin = 1.0) {
  Var x = parameter(xs);
  Var per = scale(paired_loss_per_sample(kind, forward(student, x), forward(reference, x), margin), loss_scale);
  if (losses) *losses = per.value();
  backward(sum(per));
  return x.grad();
}

/// Dual-students surrogate: the true gradient uses L(S1, T); the estimate
/// replaces T with S2. White-box access to the target is allowed here only.
inline GradFidelityReport grad_fidelity_ds(const Mlp& whitebox_target, const Mlp& s1, const Mlp& s2, const Tensor& xs,
                                           LossKind kind, GradNormalization mode = GradNormalization::gradient,
                                           double loss_scale = 1.0) {
  Tensor lt, le;
  const Tensor g_true = paired_input_gradient(s1, whitebox_target, xs, kind, loss_scale, &lt);
  const Tensor g_est = paired_input_gradient(s1, s2, xs, kind, loss_scale, &le);
  return fidelity_from_gradients(g_true, g_est, mode, &lt, &le);
}

/// Forward-differences surrogate: the estimate comes from `directions`
/// random central differences of L(S, oracle) evaluated through a soft-label
/// oracle (queries logged as eval_excluded). Hard-label losses use the
/// oracle's argmax.
inline GradFidelityReport grad_fidelity_fd(const Mlp& whitebox_target, const Mlp& student, Oracle& soft_oracle,
                                           const Tensor& xs, LossKind kind, std::size_t directions, double eps,
                                           Rng& rng, GradNormalization mode = GradNormalization::gradient,
                                           double loss_scale = 1.0) {
  if (soft_oracle.mode() != LabelMode::soft) throw ContractError("grad_fidelity_fd: needs a soft-label oracle");
  Tensor lt;
  const Tensor g_true = paired_input_gradient(student, whitebox_target, xs, kind, loss_scale, &lt);
  SampleLoss black_box = [&](const Tensor& xb) {
    const Tensor probs = soft_oracle.query(xb, Phase::eval_excluded);
    const bool hard = kind == LossKind::ce || kind == LossKind::multi_margin;
    const Tensor t = hard ? kernels::one_hot(kernels::argmax_rows(probs), probs.cols()) : probs;
    Tensor v = student_loss_per_sample(kind, constant(predict(student, xb)), t).value();
    for (double& e : v.values()) e *= loss_scale;
    return v;
  };
  const Tensor g_est = fd_gradient(black_box, xs, directions, eps, rng);
  const Tensor le = black_box(xs);
  return fidelity_from_gradients(g_true, g_est, mode, &lt, &le);
}

struct ClassDistribution {
  std::vector<double> histogram;
  double max_share = 0.0;
  double min_share = 0.0;
  double tv_from_uniform = 0.0;
};

inline ClassDistribution distribution_of(const std::vector<std::size_t>& labels, std::size_t n_classes) {
  if (labels.empty()) throw ContractError("class_distribution: no samples");
  ClassDistribution d;
  d.histogram.assign(n_classes, 0.0);
  for (auto l : labels) d.histogram.at(l) += 1.0;
  const double n = static_cast<double>(labels.size());
  for (double& h : d.histogram) h /= n;
  d.max_share = *std::max_element(d.histogram.begin(), d.histogram.end());
  d.min_share = *std::min_element(d.histogram.begin(), d.histogram.end());
  const double u = 1.0 / static_cast<double>(n_classes);
  for (double h : d.histogram) d.tv_from_uniform += 0.5 * std::fabs(h - u);
  return d;
}

/// Classifies n generated samples with the target (eval_excluded). Latents
/// are pushed through the generator in near-equal chunks of at most `batch`,
/// since batch-normalized generators depend on the batch.
inline ClassDistribution class_distribution(const Mlp& generator, Oracle& oracle, std::size_t n, Rng& rng,
                                            std::size_t batch = 256) {
  if (n == 0 || batch == 0) throw ContractError("class_distribution: n and batch must be >= 1");
  const std::size_t chunks = (n + batch - 1) / batch;
  std::vector<std::size_t> labels;
  labels.reserve(n);
  for (std::size_t k = 0; k < chunks; ++k) {
    const std::size_t size = n / chunks + (k < n % chunks ? 1 : 0);
    const Tensor z = rng.uniform_tensor({size, generator.in_dim()});
    const auto l = oracle.query_labels(predict(generator, z), Phase::eval_excluded);
    labels.insert(labels.end(), l.begin(), l.end());
  }
  return distribution_of(labels, oracle.num_classes());
}

/// For each threshold, the first recorded query count whose ensemble
/// agreement reaches it; nullopt when never reached.
inline std::vector<std::optional<std::uint64_t>> queries_to_accuracy(const std::vector<MetricsRow>& history,
                                                                     const std::vector<double>& thresholds) {
  if (history.empty()) throw ContractError("queries_to_accuracy: empty history");
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].queries < history[i - 1].queries)
      throw ContractError("queries_to_accuracy: history is not sorted by queries (row " + std::to_string(i) + ")");
  std::vector<std::optional<std::uint64_t>> out;
  for (double t : thresholds) {
    std::optional<std::uint64_t> hit;
    for (const auto& r : history)
      if (r.agreement_ensemble >= t) {
        hit = r.queries;
        break;
      }
    out.push_back(hit);
  }
  return out;
}

}  // namespace duet
