#pragma once

// l-infinity transfer attacks: crafted white-box on a proxy, scored on the
// black-box target.

#include <cmath>
#include <string>
#include <vector>

#include "duet/data.hpp"
#include "duet/losses.hpp"
#include "duet/nets.hpp"
#include "duet/oracle.hpp"

namespace duet {

enum class AttackKind { fgsm, bim, pgd };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::bim: return "bim";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "bim") return AttackKind::bim;
  if (s == "pgd") return AttackKind::pgd;
  throw ContractError("unknown attack kind '" + s + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 0.0;     // in data units
  std::size_t steps = 10;   // ignored by fgsm
  double step_size = 0.0;   // 0 means epsilon / 4
  bool targeted = false;
  bool random_start = true;  // pgd only

  double effective_step() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }

  void validate() const {
    if (!(epsilon >= 0.0)) throw ContractError("attack: epsilon must be >= 0");
    if (kind != AttackKind::fgsm && steps < 1) throw ContractError("attack: steps must be >= 1");
    if (step_size < 0.0) throw ContractError("attack: step_size must be >= 0");
  }
};

/// Per-sample gradient of CE(proxy(x), labels) with respect to x.
inline Tensor ce_input_gradient(const Mlp& proxy, const Tensor& x, const std::vector<std::size_t>& labels) {
  Var xv = parameter(x);
  backward(sum(ce_per_sample(forward(proxy, xv), kernels::one_hot(labels, proxy.out_dim()))));
  return xv.grad();
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Clamp into the eps-ball around x0, then into the domain box.
inline void project(Tensor& x, const Tensor& x0, double eps, const DataDomain& domain) {
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % n;
    x[i] = std::clamp(x[i], x0[i] - eps, x0[i] + eps);
    x[i] = std::clamp(x[i], domain.lo[c], domain.hi[c]);
  }
}

inline void signed_step(Tensor& x, const Mlp& proxy, const std::vector<std::size_t>& labels, double step,
                        bool targeted) {
  const Tensor g = ce_input_gradient(proxy, x, labels);
  const double dir = targeted ? -1.0 : 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += dir * step * sign(g[i]);
}

}  // namespace detail

/// Adversarial inputs. Untargeted attacks ascend CE on `labels` (the true
/// classes); targeted attacks descend CE on `labels` (the target classes).
inline Tensor attack(const Mlp& proxy, const Tensor& x, const std::vector<std::size_t>& labels,
                     const AttackConfig& cfg, const DataDomain& domain, Rng& rng) {
  cfg.validate();
  if (labels.size() != x.rows()) throw DimensionError("attack: one label per row required");
  if (domain.dim() != x.cols()) throw DimensionError("attack: domain width does not match inputs");
  Tensor adv = x;
  if (cfg.kind == AttackKind::fgsm) {
    detail::signed_step(adv, proxy, labels, cfg.epsilon, cfg.targeted);
    detail::project(adv, x, cfg.epsilon, domain);
    return adv;
  }
  if (cfg.kind == AttackKind::pgd && cfg.random_start) {
    for (double& v : adv.values()) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    detail::project(adv, x, cfg.epsilon, domain);
  }
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    detail::signed_step(adv, proxy, labels, cfg.effective_step(), cfg.targeted);
    detail::project(adv, x, cfg.epsilon, domain);
  }
  return adv;
}

inline Tensor fgsm(const Mlp& proxy, const Tensor& x, const std::vector<std::size_t>& y, AttackConfig cfg,
                   const DataDomain& domain) {
  cfg.kind = AttackKind::fgsm;
  Rng unused(0);
  return attack(proxy, x, y, cfg, domain, unused);
}

inline Tensor bim(const Mlp& proxy, const Tensor& x, const std::vector<std::size_t>& y, AttackConfig cfg,
                  const DataDomain& domain) {
  cfg.kind = AttackKind::bim;
  Rng unused(0);
  return attack(proxy, x, y, cfg, domain, unused);
}

inline Tensor pgd(const Mlp& proxy, const Tensor& x, const std::vector<std::size_t>& y, AttackConfig cfg,
                  const DataDomain& domain, Rng& rng) {
  cfg.kind = AttackKind::pgd;
  return attack(proxy, x, y, cfg, domain, rng);
}

struct FoolingReport {
  AttackKind kind = AttackKind::pgd;
  bool targeted = false;
  double epsilon = 0.0;
  std::size_t n_evaluated = 0;  // eligible samples
  std::size_t n_fooled = 0;
  double success_rate = 0.0;
};

/// Crafts attacks on `proxy` and scores them on the target behind `oracle`
/// (queries logged as eval_excluded). Untargeted: eligible samples are those
/// the target classifies correctly; success means the prediction leaves the
/// true class. Targeted: each sample gets a seeded uniform class different
/// from its label; eligible if the target does not already predict it;
/// success means the target outputs it.
inline FoolingReport transfer_eval(Oracle& oracle, const Mlp& proxy, const AttackConfig& cfg, const Dataset& test,
                                   const DataDomain& domain, std::uint64_t seed) {
  cfg.validate();
  if (proxy.out_dim() != oracle.num_classes())
    throw ContractError("transfer_eval: proxy has " + std::to_string(proxy.out_dim()) + " outputs, target has " +
                        std::to_string(oracle.num_classes()));
  Rng rng = Rng::substream(seed, "attacks");
  const std::size_t C = oracle.num_classes();
  std::vector<std::size_t> attack_labels = test.y;
  if (cfg.targeted)
    for (std::size_t i = 0; i < test.size(); ++i) {
      const std::size_t k = rng.below(C - 1);
      attack_labels[i] = k >= test.y[i] ? k + 1 : k;
    }
  const auto before = oracle.query_labels(test.x, Phase::eval_excluded);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool ok = cfg.targeted ? before[i] != attack_labels[i] : before[i] == test.y[i];
    if (ok) eligible.push_back(i);
  }
  if (eligible.empty()) throw ContractError("transfer_eval: no eligible samples");
  const Tensor x = kernels::gather_rows(test.x, eligible);
  std::vector<std::size_t> labels(eligible.size());
  for (std::size_t k = 0; k < eligible.size(); ++k) labels[k] = attack_labels[eligible[k]];
  const Tensor adv = attack(proxy, x, labels, cfg, domain, rng);
  const auto after = oracle.query_labels(adv, Phase::eval_excluded);
  FoolingReport rep{cfg.kind, cfg.targeted, cfg.epsilon, eligible.size(), 0, 0.0};
  for (std::size_t k = 0; k < eligible.size(); ++k)
    rep.n_fooled += cfg.targeted ? after[k] == labels[k] : after[k] != labels[k];
  rep.success_rate = static_cast<double>(rep.n_fooled) / static_cast<double>(rep.n_evaluated);
  return rep;
}

}  // namespace duet
