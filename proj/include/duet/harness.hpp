#pragma once

// Task execution for the command-line tool. Every task writes into its
// output directory:
//
//   config.ini      resolved configuration (reload with --config)
//   report.txt      human-readable summary, rebuilt by the report task
//   error.txt       only when the task failed
//
// and, depending on the task, target.ckpt / target.json, metrics.csv,
// ledger.json, s1/s2/s1_ema/s2_ema/generator checkpoints, class_map.txt,
// grad_fidelity.json, fooling.csv, scaling.txt.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "duet/attacks.hpp"
#include "duet/checkpoint.hpp"
#include "duet/config.hpp"
#include "duet/data.hpp"
#include "duet/evaluation.hpp"
#include "duet/extraction.hpp"
#include "duet/metrics.hpp"
#include "duet/target.hpp"
#include "json.hpp"

namespace duet {

namespace fs = std::filesystem;

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Target labels mapped through the unknown-class table; unmapped student
// outputs become an impossible label.
inline std::vector<std::size_t> student_labels(const Tensor& probs, const ClassMap* map) {
  auto idx = kernels::argmax_rows(probs);
  if (!map) return idx;
  for (auto& i : idx) i = i < map->size() ? map->raw_of(i) : static_cast<std::size_t>(-1);
  return idx;
}

inline double match_rate(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t h = 0;
  for (std::size_t i = 0; i < a.size(); ++i) h += a[i] == b[i];
  return static_cast<double>(h) / static_cast<double>(a.size());
}

// Generator samples in near-equal chunks of at most `batch` rows.
inline Tensor generate(const Mlp& generator, std::size_t n, std::size_t batch, Rng& rng) {
  const std::size_t chunks = (n + batch - 1) / batch;
  std::vector<double> all;
  all.reserve(n * generator.out_dim());
  for (std::size_t k = 0; k < chunks; ++k) {
    const std::size_t size = n / chunks + (k < n % chunks ? 1 : 0);
    const Tensor x = predict(generator, rng.uniform_tensor({size, generator.in_dim()}));
    all.insert(all.end(), x.values().begin(), x.values().end());
  }
  return Tensor({n, generator.out_dim()}, std::move(all));
}

}  // namespace detail

/// Loss used when measuring gradient fidelity for a run.
inline LossKind fidelity_loss(const ExtractionConfig& cfg) {
  return cfg.label_mode == LabelMode::soft ? LossKind::l1 : cfg.student_loss;
}

/// Builds the per-interval measurement callback. Only this callback sees the
/// white-box target; the extraction loop itself sees the oracle.
inline Evaluator make_evaluator(const Mlp& target, Oracle& oracle, const Tensor& test_x, const ExtractionConfig& cfg,
                                const EvalConfig& eval) {
  auto soft = std::make_shared<Oracle>(Oracle::from_mlp(target, LabelMode::soft));
  auto rng = std::make_shared<Rng>(Rng::substream(cfg.seed, "eval"));
  const Mlp* t = &target;
  Oracle* o = &oracle;
  const Tensor* tx = &test_x;
  return [=](const EvalSnapshot& s) {
    MetricsRow r;
    r.epoch = s.epoch;
    r.queries = s.queries;
    const auto truth = o->query_labels(*tx, Phase::eval_excluded);
    const Tensor p1 = predict_proba(s.s1, *tx);
    const Tensor p2 = predict_proba(s.s2, *tx);
    r.agreement_s1 = detail::match_rate(detail::student_labels(p1, s.class_map), truth);
    r.agreement_s2 = detail::match_rate(detail::student_labels(p2, s.class_map), truth);
    r.agreement_ensemble =
        detail::match_rate(detail::student_labels(ensemble_predict(s.s1, s.s2, *tx), s.class_map), truth);
    if (eval.n_generated > 0) {
      const Tensor xs = detail::generate(s.generator, eval.n_generated, cfg.batch, *rng);
      const auto d = distribution_of(o->query_labels(xs, Phase::eval_excluded), o->num_classes());
      r.class_histogram = d.histogram;
      r.tv_from_uniform = d.tv_from_uniform;
      if (!s.class_map) {
        const LossKind k = fidelity_loss(cfg);
        if (s.single_student)
          r.grad_fidelity_fd =
              grad_fidelity_fd(*t, s.s1, *soft, xs, k, cfg.fd_directions, cfg.fd_step, *rng, eval.normalization).mean;
        else
          r.grad_fidelity_ds = grad_fidelity_ds(*t, s.s1, s.s2, xs, k, eval.normalization).mean;
      }
    } else {
      r.class_histogram.assign(o->num_classes(), std::numeric_limits<double>::quiet_NaN());
    }
    return r;
  };
}

inline nlohmann::json ledger_json(const RunResult& res, const ExtractionConfig& cfg) {
  nlohmann::json j;
  j["total_samples"] = res.ledger.total_samples;
  j["by_phase"] = res.ledger.by_phase;
  j["budget"] = cfg.query_budget ? nlohmann::json(*cfg.query_budget) : nlohmann::json(nullptr);
  j["method"] = to_string(cfg.method);
  j["label_mode"] = to_string(cfg.label_mode);
  j["queries_per_epoch"] = cfg.queries_per_epoch();
  j["planned_epochs"] = cfg.planned_epochs();
  j["epochs_run"] = res.epochs_run;
  j["truncated"] = res.truncated;
  j["single_student"] = res.single_student;
  if (cfg.check_triangle)
    j["triangle"] = {{"batches_checked", res.triangle.batches_checked},
                     {"samples_checked", res.triangle.samples_checked},
                     {"violations", res.triangle.violations},
                     {"worst_slack", res.triangle.worst_slack}};
  if (cfg.unknown_classes) j["class_map"] = res.class_map.seen();
  return j;
}

/// Shared state for tasks that need the data and the victim.
struct Workspace {
  RunSpec spec;
  fs::path out;
  DatasetSplit data;
  DataDomain domain;
  Mlp target;
  TargetReport target_report;
};

inline Workspace prepare_workspace(const RunSpec& spec, bool need_target = true) {
  Workspace w{spec, fs::path(spec.output_dir), make_dataset(spec.dataset, spec.seed), {}, {}, {}};
  fs::create_directories(w.out);
  w.domain = DataDomain::of(w.data.train.x);
  if (w.data.scaling) {
    std::string s = "offset";
    for (double v : w.data.scaling->offset.values()) s += " " + detail::fmt_double(v);
    s += "\nscale";
    for (double v : w.data.scaling->scale.values()) s += " " + detail::fmt_double(v);
    detail::write_text(w.out / "scaling.txt", s + "\n");
  }
  if (!need_target) return w;
  if (!spec.target_checkpoint.empty()) {
    w.target = load_mlp_file(spec.target_checkpoint);
    w.target_report = {accuracy(w.target, w.data.train), accuracy(w.target, w.data.test)};
  } else {
    w.target = train_target(w.data, spec.target, spec.seed, &w.target_report);
    save_mlp_file((w.out / "target.ckpt").string(), w.target);
  }
  nlohmann::json tj{{"train_accuracy", w.target_report.train_accuracy},
                    {"test_accuracy", w.target_report.test_accuracy}};
  detail::write_text(w.out / "target.json", tj.dump(2) + "\n");
  return w;
}

inline void save_run(const fs::path& out, const RunResult& res, const ExtractionConfig& cfg, std::size_t n_classes) {
  save_mlp_file((out / "s1.ckpt").string(), res.s1);
  save_mlp_file((out / "s2.ckpt").string(), res.s2);
  save_mlp_file((out / "s1_ema.ckpt").string(), res.s1_ema);
  save_mlp_file((out / "s2_ema.ckpt").string(), res.s2_ema);
  save_mlp_file((out / "generator.ckpt").string(), res.generator);
  std::ofstream m(out / "metrics.csv", std::ios::binary);
  write_metrics_csv(m, res.metrics_history, n_classes);
  detail::write_text(out / "ledger.json", ledger_json(res, cfg).dump(2) + "\n");
  if (cfg.unknown_classes) {
    std::string s;
    for (std::size_t i = 0; i < res.class_map.size(); ++i)
      s += std::to_string(i) + " " + std::to_string(res.class_map.raw_of(i)) + "\n";
    detail::write_text(out / "class_map.txt", s);
  }
}

// ---------------------------------------------------------------- report

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string format_queries(const std::optional<std::uint64_t>& q) {
  return q ? std::to_string(*q) : "not reached";
}

/// Side-by-side queries-to-accuracy and final agreement for two runs.
inline std::string comparison_table(const std::string& name_a, const std::vector<MetricsRow>& a,
                                    const std::string& name_b, const std::vector<MetricsRow>& b,
                                    const std::vector<double>& thresholds) {
  std::ostringstream os;
  const auto qa = queries_to_accuracy(a, thresholds);
  const auto qb = queries_to_accuracy(b, thresholds);
  os << "comparison: " << name_a << " vs " << name_b << "\n";
  os << "  threshold," << name_a << "," << name_b << "\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    os << "  " << num(thresholds[i]) << "," << format_queries(qa[i]) << "," << format_queries(qb[i])
       << "\n";
  os << "  final_agreement," << num(a.back().agreement_ensemble) << ","
     << num(b.back().agreement_ensemble) << "\n";
  return os.str();
}

/// Report for an output directory; a pure function of the files in it.
inline std::string build_report(const fs::path& dir) {
  std::ostringstream os;
  RunSpec spec;
  if (fs::exists(dir / "config.ini")) spec = resolve_config(read_config_file((dir / "config.ini").string()));
  os << "run report\n";
  os << "task: " << spec.task << "\nseed: " << spec.seed << "\n";
  if (fs::exists(dir / "target.json")) {
    const auto tj = nlohmann::json::parse(detail::read_text(dir / "target.json"));
    os << "target test accuracy: " << num(tj.at("test_accuracy").get<double>()) << "\n";
  }
  if (fs::exists(dir / "ledger.json")) {
    const auto lj = nlohmann::json::parse(detail::read_text(dir / "ledger.json"));
    os << "method: " << lj.at("method").get<std::string>() << "\nlabel mode: " << lj.at("label_mode").get<std::string>()
       << "\n";
    os << "queries: " << lj.at("total_samples").get<std::uint64_t>();
    for (const auto& [phase, n] : lj.at("by_phase").items()) os << " " << phase << "=" << n.get<std::uint64_t>();
    os << "\nepochs: " << lj.at("epochs_run").get<std::size_t>() << " of " << lj.at("planned_epochs").get<std::size_t>()
       << (lj.at("truncated").get<bool>() ? " (truncated by budget)" : "") << "\n";
    if (lj.contains("triangle"))
      os << "triangle violations: " << lj["triangle"].at("violations").get<std::uint64_t>() << " of "
         << lj["triangle"].at("batches_checked").get<std::uint64_t>() << " batches\n";
  }
  if (fs::exists(dir / "metrics.csv")) {
    std::ifstream m(dir / "metrics.csv", std::ios::binary);
    const auto rows = read_metrics_csv(m);
    if (!rows.empty()) {
      const auto& last = rows.back();
      os << "final agreement: s1=" << num(last.agreement_s1)
         << " s2=" << num(last.agreement_s2)
         << " ensemble=" << num(last.agreement_ensemble) << "\n";
      if (!std::isnan(last.grad_fidelity_ds)) os << "final gradient distance (ds): " << num(last.grad_fidelity_ds) << "\n";
      if (!std::isnan(last.grad_fidelity_fd)) os << "final gradient distance (fd): " << num(last.grad_fidelity_fd) << "\n";
      if (!std::isnan(last.tv_from_uniform)) os << "final class tv from uniform: " << num(last.tv_from_uniform) << "\n";
      os << "queries to agreement:\n";
      const auto q = queries_to_accuracy(rows, spec.eval.thresholds);
      for (std::size_t i = 0; i < q.size(); ++i)
        os << "  " << num(spec.eval.thresholds[i]) << "," << format_queries(q[i]) << "\n";
      const fs::path other = spec.eval.run_dir;
      if (!other.empty() && fs::exists(other / "metrics.csv") && fs::absolute(other) != fs::absolute(dir)) {
        std::ifstream om(other / "metrics.csv", std::ios::binary);
        os << comparison_table(dir.filename().string(), rows, other.filename().string(), read_metrics_csv(om),
                               spec.eval.thresholds);
      }
    }
  }
  if (fs::exists(dir / "grad_fidelity.json")) {
    const auto gj = nlohmann::json::parse(detail::read_text(dir / "grad_fidelity.json"));
    os << "gradient fidelity (" << gj.at("surrogate").get<std::string>()
       << "): mean=" << num(gj.at("mean").get<double>())
       << " median=" << num(gj.at("median").get<double>())
       << " excluded=" << gj.at("excluded").get<std::size_t>() << "\n";
  }
  if (fs::exists(dir / "fooling.csv")) {
    os << "fooling rates:\n";
    std::istringstream is(detail::read_text(dir / "fooling.csv"));
    std::string line;
    while (std::getline(is, line)) os << "  " << line << "\n";
  }
  if (fs::exists(dir / "error.txt")) os << "error: " << detail::read_text(dir / "error.txt");
  return os.str();
}

// ---------------------------------------------------------------- tasks

inline void task_train_target(const RunSpec& spec) { prepare_workspace(spec, true); }

inline RunResult task_extract(const RunSpec& spec, std::optional<Mlp> pretrained = std::nullopt) {
  Workspace w = prepare_workspace(spec, true);
  const ExtractionConfig& cfg = spec.extraction;
  Oracle oracle = Oracle::from_mlp(w.target, cfg.label_mode, cfg.query_budget);
  Evaluator ev = make_evaluator(w.target, oracle, w.data.test.x, cfg, spec.eval);
  RunResult res = pretrained ? finetune_with_ds(*pretrained, cfg, oracle, w.domain, ev)
                             : run_extraction(cfg, oracle, w.domain, ev);
  save_run(w.out, res, cfg, w.target.out_dim());
  return res;
}

inline void task_finetune(const RunSpec& spec) {
  if (spec.pretrained.empty()) throw ConfigError("finetune.pretrained: checkpoint path required");
  task_extract(spec, load_mlp_file(spec.pretrained));
}

inline void task_grad_fidelity(const RunSpec& spec) {
  if (spec.eval.run_dir.empty()) throw ConfigError("eval.run_dir: extraction output directory required");
  Workspace w = prepare_workspace(spec, true);
  const fs::path run = spec.eval.run_dir;
  const auto lj = nlohmann::json::parse(detail::read_text(run / "ledger.json"));
  const Mlp s1 = load_mlp_file((run / "s1_ema.ckpt").string());
  const Mlp s2 = load_mlp_file((run / "s2_ema.ckpt").string());
  const Mlp gen = load_mlp_file((run / "generator.ckpt").string());
  const ExtractionConfig& cfg = spec.extraction;
  Rng rng = Rng::substream(spec.seed, "eval");
  const Tensor xs = detail::generate(gen, std::max<std::size_t>(spec.eval.n_generated, 2), cfg.batch, rng);
  const LossKind k = fidelity_loss(cfg);
  const bool single = lj.at("single_student").get<bool>();
  Oracle soft = Oracle::from_mlp(w.target, LabelMode::soft);
  const GradFidelityReport rep =
      single ? grad_fidelity_fd(w.target, s1, soft, xs, k, cfg.fd_directions, cfg.fd_step, rng, spec.eval.normalization)
             : grad_fidelity_ds(w.target, s1, s2, xs, k, spec.eval.normalization);
  nlohmann::json j{{"surrogate", single ? "forward_differences" : "dual_students"},
                   {"loss", to_string(k)},
                   {"normalization", to_string(spec.eval.normalization)},
                   {"n", xs.rows()},
                   {"mean", rep.mean},
                   {"median", rep.median},
                   {"excluded", rep.excluded},
                   {"distances", rep.distances}};
  detail::write_text(w.out / "grad_fidelity.json", j.dump(2) + "\n");
}

inline Mlp attack_proxy(const Workspace& w, Oracle& oracle) {
  const std::string& p = w.spec.attack.proxy;
  if (p == "whitebox") return w.target;
  if (p == "data") {
    TargetConfig pc = w.spec.target;
    pc.hidden = w.spec.attack.data_proxy_hidden;
    return train_classifier(w.data.train, pc, Rng::substream_seed(w.spec.seed, "data_proxy"));
  }
  if (p == "student") {
    if (w.spec.eval.run_dir.empty()) throw ConfigError("attack.proxy = student needs eval.run_dir");
    const fs::path run = w.spec.eval.run_dir;
    if (nlohmann::json::parse(detail::read_text(run / "ledger.json")).at("single_student").get<bool>())
      return load_mlp_file((run / "s1_ema.ckpt").string());
    return select_proxy(load_mlp_file((run / "s1_ema.ckpt").string()), load_mlp_file((run / "s2_ema.ckpt").string()),
                        oracle, w.data.test.x);
  }
  throw ConfigError("attack.proxy: expected student, whitebox or data, got '" + p + "'");
}

inline std::vector<FoolingReport> task_attack(const RunSpec& spec) {
  Workspace w = prepare_workspace(spec, true);
  Oracle oracle = Oracle::from_mlp(w.target, LabelMode::soft);
  const Mlp proxy = attack_proxy(w, oracle);
  const double range = w.domain.mean_range();
  std::ostringstream csv;
  csv << "proxy,kind,epsilon_fraction,epsilon,targeted,n_evaluated,n_fooled,success_rate\n";
  std::vector<FoolingReport> out;
  for (const auto& c : expand_attacks(spec.attack, range)) {
    const FoolingReport r = transfer_eval(oracle, proxy, c, w.data.test, w.domain, spec.seed);
    csv << spec.attack.proxy << "," << to_string(c.kind) << "," << detail::fmt_double(c.epsilon / range) << ","
        << detail::fmt_double(c.epsilon) << "," << (c.targeted ? "true" : "false") << "," << r.n_evaluated << ","
        << r.n_fooled << "," << detail::fmt_double(r.success_rate) << "\n";
    out.push_back(r);
  }
  detail::write_text(w.out / "fooling.csv", csv.str());
  return out;
}

/// Executes spec.task. Returns 0 on success, 1 on failure; on failure the
/// error is written to error.txt and included in report.txt. Outputs
/// produced before the failure are kept.
inline int run_task(const RunSpec& spec, std::ostream& log) {
  const fs::path out = spec.output_dir;
  fs::create_directories(out);
  fs::remove(out / "error.txt");
  int status = 0;
  try {
    if (spec.task != "report") detail::write_text(out / "config.ini", echo_config(spec));
    if (spec.task == "train-target")
      task_train_target(spec);
    else if (spec.task == "extract")
      task_extract(spec);
    else if (spec.task == "finetune")
      task_finetune(spec);
    else if (spec.task == "grad-fidelity")
      task_grad_fidelity(spec);
    else if (spec.task == "attack")
      task_attack(spec);
    else if (spec.task != "report")
      throw ConfigError("unknown task '" + spec.task + "'");
  } catch (const std::exception& e) {
    detail::write_text(out / "error.txt", std::string(e.what()) + "\n");
    log << "error: " << e.what() << "\n";
    status = 1;
  }
  try {
    const std::string report = build_report(out);
    detail::write_text(out / "report.txt", report);
    log << report;
  } catch (const std::exception& e) {
    log << "error: cannot build report: " << e.what() << "\n";
    status = 1;
  }
  return status;
}

}  // namespace duet
