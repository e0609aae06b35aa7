#pragma once

// Data-free extraction loops.
//
// Dual students: each epoch runs i_G generator steps that maximize the l1
// disagreement between two students (no target queries), then i_S student
// steps in which both students fit the target's answers on a fresh generated
// batch. The forward-differences baseline replaces the second student with a
// zeroth-order estimate of the target-side gradient, costing 2*m*batch
// queries per generator step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "duet/data.hpp"
#include "duet/losses.hpp"
#include "duet/metrics.hpp"
#include "duet/nets.hpp"
#include "duet/oracle.hpp"
#include "duet/zeroth_order.hpp"

namespace duet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Method { dual_students, dfme_fd };

inline const char* to_string(Method m) { return m == Method::dual_students ? "dual_students" : "dfme_fd"; }

inline Method parse_method(const std::string& s) {
  if (s == "dual_students") return Method::dual_students;
  if (s == "dfme_fd") return Method::dfme_fd;
  throw ConfigError("unknown extraction method '" + s + "'");
}

struct Architecture {
  std::vector<std::size_t> student_hidden{32, 32};
  std::vector<std::size_t> generator_hidden{64, 64};
  bool generator_batch_norm = true;
};

struct ExtractionConfig {
  Method method = Method::dual_students;
  std::size_t epochs = 0;  // i_E; 0 derives it from the budget
  std::size_t generator_iters = 1;
  std::size_t student_iters = 5;
  std::size_t batch = 256;
  std::size_t latent_dim = 16;
  double lr_generator = 1e-4;
  double lr_student = 0.3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double ema_decay = 0.9;
  LabelMode label_mode = LabelMode::soft;
  LossKind student_loss = LossKind::l1;
  LossKind generator_loss = LossKind::l1;
  std::size_t fd_directions = 1;
  double fd_step = 1e-3;
  std::optional<std::uint64_t> query_budget = 200000;
  std::uint64_t seed = 0;
  bool unknown_classes = false;
  std::size_t max_classes = 64;
  double margin = 1.0;
  double eval_fraction = 0.05;
  bool check_triangle = false;
  Architecture arch;

  /// Label-mode dependent defaults: soft uses l1 with lr 0.3, hard uses
  /// cross-entropy with lr 0.05. Generator lr is 1e-4 in both.
  static ExtractionConfig defaults_for(LabelMode mode, Method method = Method::dual_students) {
    ExtractionConfig c;
    c.method = method;
    c.label_mode = mode;
    c.student_loss = mode == LabelMode::soft ? LossKind::l1 : LossKind::ce;
    c.lr_student = mode == LabelMode::soft ? 0.3 : 0.05;
    c.generator_loss = (method == Method::dfme_fd && mode == LabelMode::hard) ? c.student_loss : LossKind::l1;
    return c;
  }

  void validate() const {
    if (generator_iters < 1 || student_iters < 1 || batch < 1 || latent_dim < 1)
      throw ConfigError("extraction: generator_iters, student_iters, batch and latent_dim must be >= 1");
    if (!(lr_generator >= 0.0) || !(lr_student >= 0.0)) throw ConfigError("extraction: learning rates must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("extraction: ema_decay must lie in [0, 1)");
    if (!(eval_fraction > 0.0 && eval_fraction <= 1.0)) throw ConfigError("extraction: eval_fraction must lie in (0, 1]");
    if (method == Method::dual_students && generator_loss != LossKind::l1)
      throw ConfigError("extraction: dual_students uses the l1 generator loss");
    if (label_mode == LabelMode::hard && (student_loss == LossKind::l1 || student_loss == LossKind::kl) &&
        method == Method::dfme_fd)
      throw ConfigError("extraction: hard-label forward differences needs student_loss ce or multi_margin");
    if (label_mode == LabelMode::hard && student_loss == LossKind::kl)
      throw ConfigError("extraction: kl student loss needs soft labels");
    if (method == Method::dfme_fd && (fd_directions < 1 || !(fd_step > 0.0)))
      throw ConfigError("extraction: forward differences needs fd_directions >= 1 and fd_step > 0");
    if (unknown_classes && (label_mode != LabelMode::hard || method != Method::dual_students))
      throw ConfigError("extraction: unknown_classes requires hard labels and dual_students");
    if (unknown_classes && max_classes < 2) throw ConfigError("extraction: max_classes must be >= 2");
    if (epochs == 0 && !query_budget) throw ConfigError("extraction: set epochs or query_budget");
  }

  std::uint64_t queries_per_epoch() const {
    const std::uint64_t per_gen = method == Method::dfme_fd ? 2 * fd_directions * generator_iters : 0;
    return (student_iters + per_gen) * batch;
  }

  std::size_t planned_epochs() const {
    if (epochs > 0) return epochs;
    return static_cast<std::size_t>(*query_budget / queries_per_epoch());
  }
};

/// Raw target class ids in first-seen order; position is the student output index.
class ClassMap {
 public:
  std::size_t observe(std::size_t raw) {
    auto [it, inserted] = index_.try_emplace(raw, seen_.size());
    if (inserted) seen_.push_back(raw);
    return it->second;
  }
  std::optional<std::size_t> index_of(std::size_t raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t raw_of(std::size_t index) const { return seen_.at(index); }
  std::size_t size() const { return seen_.size(); }
  const std::vector<std::size_t>& seen() const { return seen_; }

 private:
  std::vector<std::size_t> seen_;
  std::map<std::size_t, std::size_t> index_;
};

struct TriangleStats {
  std::uint64_t batches_checked = 0;
  std::uint64_t samples_checked = 0;
  std::uint64_t violations = 0;
  double worst_slack = -INFINITY;  // max of lhs - rhs seen
};

struct EvalSnapshot {
  std::size_t epoch;
  std::uint64_t queries;
  const Mlp& s1;  // EMA weights
  const Mlp& s2;
  const Mlp& generator;
  bool single_student;
  const ClassMap* class_map;  // set in unknown-class mode
};

using Evaluator = std::function<MetricsRow(const EvalSnapshot&)>;

struct RunResult {
  Mlp s1, s2;          // live weights
  Mlp s1_ema, s2_ema;  // moving averages, used for reporting
  Mlp generator;
  QueryLedger ledger;
  std::vector<MetricsRow> metrics_history;
  bool truncated = false;
  bool single_student = false;
  std::size_t epochs_run = 0;
  ClassMap class_map;
  TriangleStats triangle;
};

/// Optional starting networks; anything left empty is freshly initialized
/// from the run's seed substreams.
struct InitialModels {
  std::optional<Mlp> s1, s2, generator;
};

/// Seeds for each random stream of a run, derived from the root seed.
struct SeedPlan {
  std::uint64_t init_s1, init_s2, init_g, latents, fd_directions, grow_s1, grow_s2;

  static SeedPlan from_root(std::uint64_t root) {
    return {Rng::substream_seed(root, "init_s1"),   Rng::substream_seed(root, "init_s2"),
            Rng::substream_seed(root, "init_g"),    Rng::substream_seed(root, "latents"),
            Rng::substream_seed(root, "fd_directions"), Rng::substream_seed(root, "grow_s1"),
            Rng::substream_seed(root, "grow_s2")};
  }
};

inline std::vector<std::size_t> student_dims(const ExtractionConfig& cfg, std::size_t d_in, std::size_t classes) {
  std::vector<std::size_t> dims{d_in};
  dims.insert(dims.end(), cfg.arch.student_hidden.begin(), cfg.arch.student_hidden.end());
  dims.push_back(classes);
  return dims;
}

inline Mlp make_generator(const ExtractionConfig& cfg, const DataDomain& domain, std::uint64_t seed) {
  std::vector<std::size_t> dims{cfg.latent_dim};
  dims.insert(dims.end(), cfg.arch.generator_hidden.begin(), cfg.arch.generator_hidden.end());
  dims.push_back(domain.dim());
  return init_generator(dims, Activation::relu, domain.lo, domain.hi, seed, cfg.arch.generator_batch_norm);
}

/// Average of the two students' softmax outputs.
inline Tensor ensemble_predict(const Mlp& s1, const Mlp& s2, const Tensor& x) {
  if (s1.out_dim() != s2.out_dim())
    throw ContractError("ensemble_predict: student widths differ (" + std::to_string(s1.out_dim()) + " vs " +
                        std::to_string(s2.out_dim()) + ")");
  Tensor p = predict_proba(s1, x);
  const Tensor q = predict_proba(s2, x);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * (p[i] + q[i]);
  return p;
}

/// Student with the higher agreement with the target on `probe`; ties go to s1.
inline Mlp select_proxy(const Mlp& s1, const Mlp& s2, Oracle& oracle, const Tensor& probe) {
  if (s1.out_dim() != s2.out_dim()) throw ContractError("select_proxy: student widths differ");
  const double a1 = eval_agreement(oracle, s1, probe);
  const double a2 = eval_agreement(oracle, s2, probe);
  return a2 > a1 ? s2 : s1;
}

namespace detail {

struct StudentState {
  Mlp net;
  SgdState sgd;
  EmaState ema;
  Rng grow_rng;
};

class ExtractionLoop {
 public:
  ExtractionLoop(const ExtractionConfig& cfg, Oracle& oracle, const DataDomain& domain, const Evaluator& evaluator,
                 InitialModels init)
      : cfg_(cfg),
        oracle_(oracle),
        evaluator_(evaluator),
        seeds_(SeedPlan::from_root(cfg.seed)),
        latents_(seeds_.latents),
        fd_rng_(seeds_.fd_directions) {
    cfg_.validate();
    if (domain.dim() == 0) throw ContractError("extraction: empty data domain");
    const std::size_t classes = cfg_.unknown_classes ? 2 : oracle_.num_classes();
    auto make_student = [&](std::optional<Mlp>& given, std::uint64_t seed, std::uint64_t grow_seed) {
      Mlp net = given ? std::move(*given) : init_mlp(student_dims(cfg_, domain.dim(), classes), Activation::relu, seed);
      if (net.in_dim() != domain.dim() || net.out_dim() != classes)
        throw ContractError("extraction: student shape " + std::to_string(net.in_dim()) + "->" +
                            std::to_string(net.out_dim()) + " does not match data width " +
                            std::to_string(domain.dim()) + " and " + std::to_string(classes) + " classes");
      EmaState ema = ema_init(net, cfg_.ema_decay);
      return StudentState{std::move(net), SgdState{cfg_.lr_student, cfg_.momentum, cfg_.weight_decay, {}},
                          std::move(ema), Rng(grow_seed)};
    };
    students_.push_back(make_student(init.s1, seeds_.init_s1, seeds_.grow_s1));
    if (cfg_.method == Method::dual_students) students_.push_back(make_student(init.s2, seeds_.init_s2, seeds_.grow_s2));
    generator_ = init.generator ? std::move(*init.generator) : make_generator(cfg_, domain, seeds_.init_g);
    if (generator_.in_dim() != cfg_.latent_dim || generator_.out_dim() != domain.dim())
      throw ContractError("extraction: generator shape does not match latent and data widths");
    gen_sgd_ = SgdState{cfg_.lr_generator, cfg_.momentum, cfg_.weight_decay, {}};
  }

  RunResult run() {
    const std::size_t epochs = cfg_.planned_epochs();
    const double span = cfg_.query_budget ? static_cast<double>(*cfg_.query_budget)
                                          : static_cast<double>(epochs * cfg_.queries_per_epoch());
    eval_interval_ = std::max(1.0, cfg_.eval_fraction * span);
    next_eval_ = eval_interval_;
    evaluate(0);
    std::size_t epoch = 0;
    for (; epoch < epochs && !truncated_; ++epoch) {
      for (std::size_t g = 0; g < cfg_.generator_iters && !truncated_; ++g) {
        if (cfg_.method == Method::dual_students)
          generator_step_dual();
        else
          generator_step_fd(epoch + 1);
      }
      for (std::size_t s = 0; s < cfg_.student_iters && !truncated_; ++s) student_step(epoch + 1);
    }
    epochs_run_ = epoch;
    if (history_.empty() || history_.back().queries != oracle_.ledger().total_samples) evaluate(epochs_run_);
    return finish();
  }

 private:
  Tensor sample_latents() { return latents_.uniform_tensor({cfg_.batch, cfg_.latent_dim}, 0.0, 1.0); }

  bool can_spend(std::uint64_t n) {
    auto left = oracle_.remaining();
    const std::uint64_t used = oracle_.ledger().total_samples;
    const bool over_cfg = cfg_.query_budget && used + n > *cfg_.query_budget;
    if ((left && *left < n) || over_cfg) {
      truncated_ = true;
      return false;
    }
    return true;
  }

  void generator_step_dual() {
    Var x = forward(generator_, sample_latents());
    Var loss = generator_loss_ds(softmax(forward(students_[0].net, x)), softmax(forward(students_[1].net, x)));
    backward(loss);
    sgd_step(generator_, gen_sgd_);
    for (auto& s : students_) s.net.zero_grad();
  }

  void generator_step_fd(std::size_t epoch) {
    const std::uint64_t cost = 2 * cfg_.fd_directions * cfg_.batch;
    if (!can_spend(cost)) return;
    Var x = forward(generator_, sample_latents());
    const Mlp& student = students_[0].net;
    const LossKind kind = cfg_.generator_loss;
    const double margin = cfg_.margin;
    SampleLoss target_loss = [&](const Tensor& xb) {
      Tensor t = oracle_.query(xb, Phase::generator_grad_est);
      return student_loss_per_sample(kind, constant(predict(student, xb)), t, margin).value();
    };
    Tensor g = fd_gradient(target_loss, x.value(), cfg_.fd_directions, cfg_.fd_step, fd_rng_);
    // Generator minimizes -mean(L): dLoss/dx_i = -g_i / b.
    const double s = -1.0 / static_cast<double>(cfg_.batch);
    for (double& v : g.values()) v *= s;
    backward(x, g);
    sgd_step(generator_, gen_sgd_);
    maybe_evaluate(epoch);
  }

  Tensor unknown_class_targets(const Tensor& x) {
    const auto raw = oracle_.query_labels(x, Phase::student_train);
    std::vector<std::size_t> idx(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      idx[i] = class_map_.observe(raw[i]);
      if (class_map_.size() > cfg_.max_classes)
        throw ConfigError("extraction: discovered " + std::to_string(class_map_.size()) +
                          " classes, more than max_classes=" + std::to_string(cfg_.max_classes));
    }
    const std::size_t width = std::max<std::size_t>(2, class_map_.size());
    for (auto& s : students_)
      while (s.net.out_dim() < width) grow_output(s.net, s.grow_rng, &s.sgd, &s.ema);
    return kernels::one_hot(idx, width);
  }

  void student_step(std::size_t epoch) {
    if (!can_spend(cfg_.batch)) return;
    const Tensor x = predict(generator_, sample_latents());
    const Tensor t = cfg_.unknown_classes ? unknown_class_targets(x) : oracle_.query(x, Phase::student_train);
    std::vector<Tensor> probs;
    for (auto& s : students_) {
      Var logits = forward(s.net, x);
      if (cfg_.check_triangle) probs.push_back(kernels::softmax(logits.value()));
      backward(student_loss(cfg_.student_loss, logits, t, cfg_.margin));
      sgd_step(s.net, s.sgd);
      ema_update(s.ema, s.net);
    }
    if (cfg_.check_triangle && probs.size() == 2) check_triangle(probs[0], probs[1], t);
    maybe_evaluate(epoch);
  }

  void check_triangle(const Tensor& p1, const Tensor& p2, const Tensor& t) {
    ++triangle_.batches_checked;
    bool violated = false;
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double lhs = 0.0, a = 0.0, b = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) {
        lhs += std::fabs(p1(r, c) - p2(r, c));
        a += std::fabs(p1(r, c) - t(r, c));
        b += std::fabs(p2(r, c) - t(r, c));
      }
      ++triangle_.samples_checked;
      triangle_.worst_slack = std::max(triangle_.worst_slack, lhs - (a + b));
      if (lhs > a + b + 1e-9) violated = true;
    }
    if (violated) ++triangle_.violations;
  }

  void maybe_evaluate(std::size_t epoch) {
    const auto q = static_cast<double>(oracle_.ledger().total_samples);
    if (q + 1e-9 < next_eval_) return;
    while (next_eval_ <= q + 1e-9) next_eval_ += eval_interval_;
    evaluate(epoch);
  }

  void evaluate(std::size_t epoch) {
    if (!evaluator_) return;
    const Mlp s1 = ema_apply(students_[0].ema, students_[0].net);
    const Mlp s2 = students_.size() > 1 ? ema_apply(students_[1].ema, students_[1].net) : s1;
    EvalSnapshot snap{epoch, oracle_.ledger().total_samples, s1, s2, generator_, students_.size() == 1,
                      cfg_.unknown_classes ? &class_map_ : nullptr};
    history_.push_back(evaluator_(snap));
  }

  RunResult finish() {
    const bool single = students_.size() == 1;
    Mlp s1_ema = ema_apply(students_[0].ema, students_[0].net);
    Mlp s2 = single ? students_[0].net : students_[1].net;
    Mlp s2_ema = single ? s1_ema : ema_apply(students_[1].ema, students_[1].net);
    return RunResult{std::move(students_[0].net),
                     std::move(s2),
                     std::move(s1_ema),
                     std::move(s2_ema),
                     std::move(generator_),
                     oracle_.ledger(),
                     std::move(history_),
                     truncated_,
                     single,
                     epochs_run_,
                     std::move(class_map_),
                     triangle_};
  }

  ExtractionConfig cfg_;
  Oracle& oracle_;
  const Evaluator& evaluator_;
  SeedPlan seeds_;
  Rng latents_;
  Rng fd_rng_;
  std::vector<StudentState> students_;
  Mlp generator_;
  SgdState gen_sgd_;
  ClassMap class_map_;
  TriangleStats triangle_;
  std::vector<MetricsRow> history_;
  double eval_interval_ = 1.0;
  double next_eval_ = 1.0;
  bool truncated_ = false;
  std::size_t epochs_run_ = 0;
};

}  // namespace detail

/// Dual-students extraction. Queries: epochs * student_iters * batch.
inline RunResult train_dual_students(const ExtractionConfig& cfg, Oracle& oracle, const DataDomain& domain,
                                     const Evaluator& evaluator = {}, InitialModels init = {}) {
  if (cfg.method != Method::dual_students) throw ContractError("train_dual_students: method must be dual_students");
  return detail::ExtractionLoop(cfg, oracle, domain, evaluator, std::move(init)).run();
}

/// Forward-differences baseline with a single student.
/// Queries: epochs * (student_iters + 2 * fd_directions * generator_iters) * batch.
inline RunResult train_dfme_fd(const ExtractionConfig& cfg, Oracle& oracle, const DataDomain& domain,
                               const Evaluator& evaluator = {}, InitialModels init = {}) {
  if (cfg.method != Method::dfme_fd) throw ContractError("train_dfme_fd: method must be dfme_fd");
  return detail::ExtractionLoop(cfg, oracle, domain, evaluator, std::move(init)).run();
}

/// Dual students with hard labels and no prior class count: student heads
/// start at width 2 and grow as new target classes are observed.
inline RunResult train_unknown_classes(const ExtractionConfig& cfg, Oracle& oracle, const DataDomain& domain,
                                       const Evaluator& evaluator = {}) {
  if (cfg.label_mode != LabelMode::hard || !cfg.unknown_classes)
    throw ContractError("train_unknown_classes: needs hard labels and unknown_classes=true");
  return detail::ExtractionLoop(cfg, oracle, domain, evaluator, {}).run();
}

/// Resumes dual-students training from a pretrained student. S1 starts from
/// `pretrained`; S2 and the generator are fresh. The budget comes from cfg.
inline RunResult finetune_with_ds(const Mlp& pretrained, const ExtractionConfig& cfg, Oracle& oracle,
                                  const DataDomain& domain, const Evaluator& evaluator = {}) {
  if (pretrained.out_dim() != oracle.num_classes())
    throw ContractError("finetune_with_ds: pretrained head width " + std::to_string(pretrained.out_dim()) +
                        " != target class count " + std::to_string(oracle.num_classes()));
  if (pretrained.in_dim() != domain.dim()) throw ContractError("finetune_with_ds: input width mismatch");
  InitialModels init;
  init.s1 = pretrained;
  init.s2 = init_mlp(student_dims(cfg, domain.dim(), oracle.num_classes()), Activation::relu,
                     SeedPlan::from_root(cfg.seed).init_s2);
  return train_dual_students(cfg, oracle, domain, evaluator, std::move(init));
}

/// Dispatches on cfg.method and cfg.unknown_classes.
inline RunResult run_extraction(const ExtractionConfig& cfg, Oracle& oracle, const DataDomain& domain,
                                const Evaluator& evaluator = {}, InitialModels init = {}) {
  return detail::ExtractionLoop(cfg, oracle, domain, evaluator, std::move(init)).run();
}

}  // namespace duet
