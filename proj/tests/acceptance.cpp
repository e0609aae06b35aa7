// Acceptance suite: one PASS/FAIL line per criterion. Runs the desk-scale
// experiments through the same task functions as the CLI, writing outputs
// under the directory given as argv[1] (default: acceptance_runs), and
// judges them from the files on disk. argv[2], if given, is a comma list of
// criteria to run (e.g. "1,6").

#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include "duet/duet.hpp"
#include "finite_diff.hpp"

using namespace duet;

namespace {

constexpr std::uint64_t kSeeds = 5;
constexpr std::uint64_t kBudget = 200000;

fs::path g_root = "acceptance_runs";

// Desk configuration shared by every run.
std::string desk_ini(std::uint64_t seed, const std::string& label_mode, const std::string& method) {
  std::ostringstream os;
  os << "[run]\nseed = " << seed << "\n"
     << "[dataset]\nn_classes = 4\ndim = 8\n"
     << "[extraction]\nlabel_mode = " << label_mode << "\nmethod = " << method << "\n"
     << "query_budget = " << kBudget << "\n"
     << "lr_student = " << (label_mode == "soft" ? "0.003" : "0.002") << "\n"
     << "[eval]\nn_generated = 2000\n";
  return os.str();
}

RunSpec make_spec(const std::string& ini, const std::string& task, const fs::path& out,
                  const ConfigEntries& extra = {}) {
  ConfigEntries e = parse_config_text(ini, "desk");
  e.insert(e.end(), extra.begin(), extra.end());
  e.emplace_back("run.task", task);
  e.emplace_back("run.output_dir", out.string());
  return resolve_config(e);
}

void run_or_throw(const RunSpec& spec) {
  std::ostringstream log;
  if (run_task(spec, log) != 0) throw std::runtime_error(spec.output_dir + ": " + log.str());
}

std::vector<MetricsRow> metrics(const fs::path& dir) {
  std::ifstream is(dir / "metrics.csv", std::ios::binary);
  return read_metrics_csv(is);
}

nlohmann::json json_file(const fs::path& p) { return nlohmann::json::parse(detail::read_text(p)); }

// First row at or past half of the budget.
const MetricsRow& midpoint(const std::vector<MetricsRow>& rows) {
  for (const auto& r : rows)
    if (r.queries >= kBudget / 2) return r;
  throw std::runtime_error("no metrics row past the midpoint");
}

std::uint64_t queries_to(const std::vector<MetricsRow>& rows, double t) {
  const auto q = queries_to_accuracy(rows, {t})[0];
  return q ? *q : std::numeric_limits<std::uint64_t>::max();
}

double fooling_rate(const fs::path& dir) {
  std::istringstream is(detail::read_text(dir / "fooling.csv"));
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  return std::stod(line.substr(line.rfind(',') + 1));
}

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& detail) {
  g_lines.push_back({id, pass, detail});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int prec = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string qfmt(std::uint64_t q) {
  return q == std::numeric_limits<std::uint64_t>::max() ? "never" : std::to_string(q);
}

// ------------------------------------------------------------ criterion 1

void criterion_query_ratio() {
  std::uint64_t n[2] = {0, 0};
  const char* methods[2] = {"dual_students", "dfme_fd"};
  for (int i = 0; i < 2; ++i) {
    const fs::path out = g_root / "ratio" / methods[i];
    run_or_throw(make_spec(desk_ini(1, "soft", methods[i]), "extract", out,
                           {{"extraction.query_budget", "none"},
                            {"extraction.epochs", "3"},
                            {"extraction.fd_directions", "1"},
                            {"eval.n_generated", "0"}}));
    n[i] = json_file(out / "ledger.json").at("total_samples").get<std::uint64_t>();
  }
  report(1, n[0] * 7 == n[1] * 5 && n[0] > 0,
         "ledger dual_students=" + std::to_string(n[0]) + " dfme_fd=" + std::to_string(n[1]) + " (ratio 5/7 required)");
}

// ------------------------------------------------------------ criterion 6

struct Pipeline {
  std::string name;
  std::function<Var(const Var&, Rng&)> build;  // may draw constants once per instance
  Shape shape;
  double lo = -2.0, hi = 2.0;
  // Signs of the arguments of every kink (abs, hinge) at an input; an
  // instance is skipped when a stencil point changes them.
  std::function<std::vector<int>(const Tensor&, Rng&)> kinks = {};
};

std::vector<int> signs_of(const Tensor& a, const Tensor& b) {
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] > b[i]) - (a[i] < b[i]);
  return out;
}

bool stencil_is_smooth(const Pipeline& c, const Tensor& x, std::uint64_t inst, double h) {
  Rng r0(inst);
  const auto center = c.kinks(x, r0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (double d : {h, -h}) {
      probe[i] = x[i] + d;
      Rng r(inst);
      if (c.kinks(probe, r) != center) return false;
      probe[i] = x[i];
    }
  return true;
}

void criterion_autodiff() {
  // Smooth hidden activations; relu and abs are checked on their own above.
  const Mlp student = init_mlp({4, 8, 3}, Activation::tanh, 11);
  const Mlp other = init_mlp({4, 8, 3}, Activation::tanh, 12);
  const Mlp gen = init_generator({5, 6, 4}, Activation::tanh, Tensor({4}, -1.0), Tensor({4}, 1.0), 13, true);
  const Tensor mat = Tensor::matrix({{1, 2, 0, -1}, {0.5, 0.5, 2, 1}, {-1, 0, 1, 3}, {2, -2, 0.1, 0}});
  auto hard = [](Rng& r) {
    std::vector<std::size_t> y(3);
    for (auto& v : y) v = r.below(3);
    return kernels::one_hot(y, 3);
  };
  auto soft = [](Rng& r) { return kernels::softmax(r.uniform_tensor({3, 3}, -2, 2)); };
  auto l1_kinks = [&](const Tensor& x, Rng& r) {
    const Tensor p = predict_proba(student, x);
    return signs_of(p, soft(r));
  };
  const Mlp relu_student = init_mlp({4, 8, 8, 3}, Activation::relu, 14);
  auto relu_kinks = [&](const Tensor& x, Rng&) {
    std::vector<int> out;
    Tensor h = x;
    for (const auto& l : relu_student.layers()) {
      h = kernels::add_bias(kernels::matmul(h, l.weight.value()), l.bias.value());
      for (double& v : h.values()) {
        out.push_back(v > 0);
        if (l.activation == Activation::relu) v = std::max(v, 0.0);
      }
    }
    return out;
  };
  auto margin_kinks = [&](const Tensor& x, Rng& r) {
    const Tensor z = predict(student, x);
    const auto y = kernels::argmax_rows(hard(r));
    std::vector<int> out;
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) {
        const double v = 1.0 - z(i, y[i]) + z(i, j);
        out.push_back((v > 0) - (v < 0));
      }
    return out;
  };
  std::vector<Pipeline> cases{
      {"add", [](const Var& x, Rng&) { return x + constant(Tensor({3, 4}, 0.3)); }, {3, 4}},
      {"sub", [](const Var& x, Rng&) { return constant(Tensor({3, 4}, 0.3)) - x; }, {3, 4}},
      {"mul", [](const Var& x, Rng&) { return x * x; }, {3, 4}},
      {"scale", [](const Var& x, Rng&) { return scale(x, -1.7); }, {3, 4}},
      {"add_scalar", [](const Var& x, Rng&) { return add_scalar(x * x, 0.4); }, {3, 4}},
      {"relu", [](const Var& x, Rng&) { return relu(x); }, {3, 4}},
      {"tanh", [](const Var& x, Rng&) { return tanh(x); }, {3, 4}},
      {"exp", [](const Var& x, Rng&) { return exp(x); }, {3, 4}},
      {"log", [](const Var& x, Rng&) { return log(x); }, {3, 4}, 0.1, 2.0},
      {"abs", [](const Var& x, Rng&) { return abs(x); }, {3, 4}},
      {"matmul", [&](const Var& x, Rng&) { return matmul(x, constant(mat)); }, {3, 4}},
      {"add_bias", [](const Var& x, Rng&) { return add_bias(x, constant(Tensor::vector({0.1, -0.2, 0.3, 0.4}))); },
       {3, 4}},
      {"affine_columns",
       [](const Var& x, Rng&) {
         return affine_columns(tanh(x), Tensor::vector({0.5, 1, 2, 0.25}), Tensor::vector({0.5, 0, 1, -1}),
                               Tensor::vector({0, -1, -1, -1.25}), Tensor::vector({1, 1, 3, -0.75}));
       },
       {3, 4}},
      {"sum", [](const Var& x, Rng&) { return sum(x * x); }, {3, 4}},
      {"mean", [](const Var& x, Rng&) { return mean(x * x); }, {3, 4}},
      {"row_sum", [](const Var& x, Rng&) { return row_sum(x * x); }, {3, 4}},
      {"softmax", [](const Var& x, Rng&) { return softmax(x); }, {3, 4}},
      {"log_softmax", [](const Var& x, Rng&) { return log_softmax(x); }, {3, 4}},
      {"batch_standardize", [](const Var& x, Rng&) { return batch_standardize(x); }, {3, 4}},
      {"student_l1", [&](const Var& x, Rng& r) { return student_loss(LossKind::l1, forward(student, x), soft(r)); },
       {3, 4}, -2.0, 2.0, l1_kinks},
      {"student_kl", [&](const Var& x, Rng& r) { return student_loss(LossKind::kl, forward(student, x), soft(r)); },
       {3, 4}},
      {"student_ce", [&](const Var& x, Rng& r) { return student_loss(LossKind::ce, forward(student, x), hard(r)); },
       {3, 4}},
      {"student_multi_margin",
       [&](const Var& x, Rng& r) { return student_loss(LossKind::multi_margin, forward(student, x), hard(r)); },
       {3, 4}, -2.0, 2.0, margin_kinks},
      {"generator_ds",
       [&](const Var& z, Rng&) {
         const Var x = forward(gen, z);
         return generator_loss_ds(forward(student, x), forward(other, x));
       },
       {8, 5}, 0.0, 1.0,
       [&](const Tensor& z, Rng&) {
         const Tensor x = predict(gen, z);
         return signs_of(predict_proba(student, x), predict_proba(other, x));
       }},
      {"relu_student_ce",
       [&](const Var& x, Rng& r) { return student_loss(LossKind::ce, forward(relu_student, x), hard(r)); },
       {3, 4}, -2.0, 2.0, relu_kinks},
      {"paired_ce",
       [&](const Var& x, Rng&) {
         return sum(paired_loss_per_sample(LossKind::ce, forward(student, x), forward(other, x)));
       },
       {3, 4}},
  };
  int passed = 0;
  std::string worst_name, failing;
  std::size_t skipped = 0;
  double worst = 0.0;
  for (const auto& c : cases) {
    Rng rng(Rng::substream_seed(2024, c.name));
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = rng.uniform_tensor(c.shape, c.lo, c.hi);
      for (double& v : x.values())
        if (std::fabs(v) < 1e-2) v = 0.5;
      const std::uint64_t inst = rng.next_u64();
      if (c.kinks) {
        if (!stencil_is_smooth(c, x, inst, 1e-4)) {
          ++skipped;
          --trial;
          continue;
        }
      }
      auto loss = [&](const Var& in) {
        Rng r(inst);
        Var y = c.build(in, r);
        if (y.value().size() == 1) return sum(y);
        const Tensor w = Rng(inst + 1).uniform_tensor(y.shape(), -1, 1);
        return sum(y * constant(w));
      };
      Var p = parameter(x);
      backward(loss(p));
      auto f = [&](const Tensor& t) { return loss(constant(t)).value().item(); };
      const double e = testing::rel_err(p.grad(), testing::central_diff(f, x, 1e-4));
      if (e > worst) {
        worst = e;
        worst_name = c.name;
      }
      ok = ok && e <= 1e-4;
    }
    passed += ok;
    if (!ok) failing += " " + c.name;
  }
  report(6, passed == static_cast<int>(cases.size()),
         std::to_string(passed) + "/" + std::to_string(cases.size()) +
             " operations and pipelines within 1e-4 over 100 instances (worst " + worst_name + " " +
             fmt(worst, 8) + "; " + std::to_string(skipped) + " kink-straddling draws skipped)" + (failing.empty() ? "" : "; failing:" + failing));
}

// ------------------------------------------------------------ per seed

struct SeedResult {
  std::uint64_t seed;
  double ds_soft, fd_soft, ds_hard, fd_hard, fd_mm, unknown;
  std::size_t classes_found;
  std::uint64_t q75_ds_soft, q75_fd_soft, q75_ds_hard, q75_fd_hard;
  double gf_ds_soft, gf_fd_soft, gf_ds_hard, gf_fd_hard;
  double tv_ds, tv_fd;
  std::uint64_t tri_batches, tri_violations;
  bool ds_full;
  double ft_before, ft_degraded, ft_after;
  double fool_ds, fool_fd, fool_data, fool_wb;
};

Mlp degrade(const Mlp& net, const Tensor& truth_x, Oracle& oracle, std::uint64_t seed, double* before,
            double* after) {
  const auto truth = oracle.query_labels(truth_x, Phase::eval_excluded);
  auto agree = [&](const Mlp& m) { return detail::match_rate(predict_labels(m, truth_x), truth); };
  *before = agree(net);
  Rng rng = Rng::substream(seed, "degrade");
  std::vector<Tensor> noise;
  for (const auto& p : net.parameters()) noise.push_back(rng.normal_tensor(p.value().shape()));
  for (double sigma = 0.01;; sigma *= 1.1) {
    Mlp d = net;
    auto params = d.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor v = params[i].value();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += sigma * noise[i][k];
      params[i].mutable_value() = v;
    }
    *after = agree(d);
    if (*after <= *before - 0.10) return d;
    if (sigma > 100) throw std::runtime_error("degrade: cannot reduce agreement");
  }
}

SeedResult run_seed(std::uint64_t seed) {
  SeedResult r{};
  r.seed = seed;
  const fs::path dir = g_root / ("seed_" + std::to_string(seed));
  const std::string soft_ds = desk_ini(seed, "soft", "dual_students");
  const std::string soft_fd = desk_ini(seed, "soft", "dfme_fd");
  const std::string hard_ds = desk_ini(seed, "hard", "dual_students");
  const std::string hard_fd = desk_ini(seed, "hard", "dfme_fd");
  const ConfigEntries tri{{"extraction.check_triangle", "true"}};

  run_or_throw(make_spec(soft_ds, "train-target", dir / "target"));
  const ConfigEntries tgt{{"target.checkpoint", (dir / "target" / "target.ckpt").string()}};
  auto with = [&](ConfigEntries a, const ConfigEntries& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  run_or_throw(make_spec(soft_ds, "extract", dir / "ds_soft", with(tgt, tri)));
  run_or_throw(make_spec(soft_fd, "extract", dir / "fd_soft", tgt));
  run_or_throw(make_spec(hard_ds, "extract", dir / "ds_hard", with(tgt, tri)));
  run_or_throw(make_spec(hard_fd, "extract", dir / "fd_hard", tgt));
  run_or_throw(make_spec(hard_fd, "extract", dir / "fd_hard_mm",
                         with(tgt, {{"extraction.student_loss", "multi_margin"},
                                    {"extraction.generator_loss", "multi_margin"}})));
  run_or_throw(make_spec(hard_ds, "extract", dir / "ds_hard_unknown",
                         with(tgt, {{"extraction.unknown_classes", "true"}})));

  const auto m_ds_s = metrics(dir / "ds_soft"), m_fd_s = metrics(dir / "fd_soft");
  const auto m_ds_h = metrics(dir / "ds_hard"), m_fd_h = metrics(dir / "fd_hard");
  r.ds_soft = m_ds_s.back().agreement_ensemble;
  r.fd_soft = m_fd_s.back().agreement_ensemble;
  r.ds_hard = m_ds_h.back().agreement_ensemble;
  r.fd_hard = m_fd_h.back().agreement_ensemble;
  r.fd_mm = metrics(dir / "fd_hard_mm").back().agreement_ensemble;
  r.unknown = metrics(dir / "ds_hard_unknown").back().agreement_ensemble;
  r.classes_found = json_file(dir / "ds_hard_unknown" / "ledger.json").at("class_map").size();
  r.q75_ds_soft = queries_to(m_ds_s, 0.75);
  r.q75_fd_soft = queries_to(m_fd_s, 0.75);
  r.q75_ds_hard = queries_to(m_ds_h, 0.75);
  r.q75_fd_hard = queries_to(m_fd_h, 0.75);
  r.gf_ds_soft = midpoint(m_ds_s).grad_fidelity_ds;
  r.gf_fd_soft = midpoint(m_fd_s).grad_fidelity_fd;
  r.gf_ds_hard = midpoint(m_ds_h).grad_fidelity_ds;
  r.gf_fd_hard = midpoint(m_fd_h).grad_fidelity_fd;
  r.tv_ds = m_ds_s.back().tv_from_uniform;
  r.tv_fd = m_fd_s.back().tv_from_uniform;
  bool full = true;
  for (const char* run : {"ds_soft", "ds_hard"}) {
    const auto lj = json_file(dir / run / "ledger.json");
    r.tri_batches += lj["triangle"].at("batches_checked").get<std::uint64_t>();
    r.tri_violations += lj["triangle"].at("violations").get<std::uint64_t>();
    full = full && !lj.at("truncated").get<bool>() && lj.at("epochs_run") == lj.at("planned_epochs");
  }
  r.ds_full = full;

  // Fine-tuning from a degraded copy of the better soft-label DS student.
  {
    const DatasetSplit data = make_dataset(make_spec(soft_ds, "extract", dir).dataset, seed);
    const Mlp target = load_mlp_file((dir / "target" / "target.ckpt").string());
    Oracle oracle = Oracle::from_mlp(target, LabelMode::soft);
    const Mlp pre = select_proxy(load_mlp_file((dir / "ds_soft" / "s1_ema.ckpt").string()),
                                 load_mlp_file((dir / "ds_soft" / "s2_ema.ckpt").string()), oracle, data.test.x);
    const Mlp bad = degrade(pre, data.test.x, oracle, seed, &r.ft_before, &r.ft_degraded);
    fs::create_directories(dir / "finetune");
    save_mlp_file((dir / "finetune" / "degraded.ckpt").string(), bad);
    run_or_throw(make_spec(soft_ds, "finetune", dir / "finetune",
                           with(tgt, {{"finetune.pretrained", (dir / "finetune" / "degraded.ckpt").string()},
                                      {"extraction.query_budget", std::to_string(kBudget / 20)}})));
    r.ft_after = metrics(dir / "finetune").back().agreement_s1;
  }

  // Transfer attacks.
  const ConfigEntries small{{"attack.kinds", "pgd"}, {"attack.epsilon_fractions", "0.01"}, {"attack.targeted", "false"}};
  auto attack = [&](const std::string& name, const std::string& proxy, const std::string& run_dir,
                    const ConfigEntries& grid) {
    ConfigEntries e = with(tgt, grid);
    e.emplace_back("attack.proxy", proxy);
    if (!run_dir.empty()) e.emplace_back("eval.run_dir", (dir / run_dir).string());
    run_or_throw(make_spec(soft_ds, "attack", dir / name, e));
    return fooling_rate(dir / name);
  };
  r.fool_ds = attack("attack_ds", "student", "ds_soft", small);
  r.fool_fd = attack("attack_fd", "student", "fd_soft", small);
  r.fool_data = attack("attack_data", "data", "", small);
  r.fool_wb = attack("attack_whitebox", "whitebox", "",
                     {{"attack.kinds", "pgd"}, {"attack.epsilon_fractions", "0.125"}, {"attack.targeted", "false"}});
  return r;
}

template <class F>
int count(const std::vector<SeedResult>& rs, F f) {
  int n = 0;
  for (const auto& r : rs) n += f(r) ? 1 : 0;
  return n;
}

template <class F>
std::string list(const std::vector<SeedResult>& rs, F f) {
  std::string s;
  for (const auto& r : rs) s += (s.empty() ? "" : " ") + f(r);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_root = argv[1];
  std::set<int> only;
  if (argc > 2)
    for (const auto& t : detail::split_list(argv[2])) only.insert(std::stoi(t));
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  fs::create_directories(g_root);
  try {
    if (want(1)) criterion_query_ratio();
    if (want(6)) criterion_autodiff();
    bool any_seeded = false;
    for (int id : {2, 3, 4, 5, 7, 8, 9, 10, 11, 12}) any_seeded = any_seeded || want(id);
    if (any_seeded) {

    std::vector<std::future<SeedResult>> jobs;
    for (std::uint64_t s = 1; s <= kSeeds; ++s) jobs.push_back(std::async(std::launch::async, run_seed, s));
    std::vector<SeedResult> rs;
    for (auto& j : jobs) rs.push_back(j.get());

    {
      std::uint64_t b = 0, v = 0;
      bool full = true;
      for (const auto& r : rs) {
        b += r.tri_batches;
        v += r.tri_violations;
        full = full && r.ds_full;
      }
      report(2, full && b > 0 && v == 0,
             std::to_string(v) + " violating batches of " + std::to_string(b) +
                 " checked over full-budget dual-students runs");
    }
    {
      const int soft = count(rs, [](auto& r) { return r.gf_ds_soft < r.gf_fd_soft; });
      const int hard = count(rs, [](auto& r) { return r.gf_ds_hard < r.gf_fd_hard; });
      report(3, soft >= 4 && hard >= 4,
             "ds < fd distance at midpoint: soft " + std::to_string(soft) + "/5, hard " + std::to_string(hard) +
                 "/5; soft ds/fd " + list(rs, [](auto& r) { return fmt(r.gf_ds_soft, 3) + "/" + fmt(r.gf_fd_soft, 3); }) +
                 "; hard ds/fd " + list(rs, [](auto& r) { return fmt(r.gf_ds_hard, 3) + "/" + fmt(r.gf_fd_hard, 3); }));
    }
    {
      const int soft = count(rs, [](auto& r) { return r.ds_soft > r.fd_soft; });
      const int hard = count(rs, [](auto& r) { return r.ds_hard > r.fd_hard; });
      const int floor = count(rs, [](auto& r) { return r.ds_soft >= 0.90; });
      report(4, soft >= 4 && hard >= 4 && floor == 5,
             "ds > fd: soft " + std::to_string(soft) + "/5, hard " + std::to_string(hard) +
                 "/5; ds soft >= 0.90 on " + std::to_string(floor) + "/5; soft ds/fd " +
                 list(rs, [](auto& r) { return fmt(r.ds_soft) + "/" + fmt(r.fd_soft); }) + "; hard ds/fd " +
                 list(rs, [](auto& r) { return fmt(r.ds_hard) + "/" + fmt(r.fd_hard); }));
    }
    {
      const int soft = count(rs, [](auto& r) { return r.q75_ds_soft <= r.q75_fd_soft; });
      const int hard = count(rs, [](auto& r) { return r.q75_ds_hard <= r.q75_fd_hard; });
      report(5, soft >= 4 && hard >= 4,
             "ds reaches 0.75 no later than fd: soft " + std::to_string(soft) + "/5, hard " + std::to_string(hard) +
                 "/5; soft " + list(rs, [](auto& r) { return qfmt(r.q75_ds_soft) + "/" + qfmt(r.q75_fd_soft); }) +
                 "; hard " + list(rs, [](auto& r) { return qfmt(r.q75_ds_hard) + "/" + qfmt(r.q75_fd_hard); }));
    }
    {
      const int n = count(rs, [](auto& r) { return r.fd_mm >= r.fd_hard; });
      report(7, n >= 4,
             "fd multi_margin >= ce on " + std::to_string(n) + "/5; mm/ce " +
                 list(rs, [](auto& r) { return fmt(r.fd_mm) + "/" + fmt(r.fd_hard); }));
    }
    {
      const int found = count(rs, [](auto& r) { return r.classes_found == 4; });
      const int close = count(rs, [](auto& r) { return r.unknown >= r.ds_hard - 0.10; });
      report(8, found == 5 && close == 5,
             "all classes found on " + std::to_string(found) + "/5, within 10 points on " + std::to_string(close) +
                 "/5; unknown/known " + list(rs, [](auto& r) { return fmt(r.unknown) + "/" + fmt(r.ds_hard); }));
    }
    {
      const int n = count(rs, [](auto& r) {
        return r.ft_after - r.ft_degraded >= 0.5 * (r.ft_before - r.ft_degraded);
      });
      report(9, n >= 4,
             "recovered >= half on " + std::to_string(n) + "/5; before/degraded/after " + list(rs, [](auto& r) {
               return fmt(r.ft_before, 3) + "/" + fmt(r.ft_degraded, 3) + "/" + fmt(r.ft_after, 3);
             }));
    }
    {
      const int a = count(rs, [](auto& r) { return r.fool_ds >= r.fool_fd; });
      const int b = count(rs, [](auto& r) { return r.fool_fd >= r.fool_data; });
      const int wb = count(rs, [](auto& r) { return r.fool_wb >= 0.95; });
      report(10, a >= 4 && b >= 4 && wb == 5,
             "small eps ds >= fd " + std::to_string(a) + "/5, fd >= data " + std::to_string(b) +
                 "/5, white-box large eps >= 0.95 " + std::to_string(wb) + "/5; ds/fd/data/whitebox " +
                 list(rs, [](auto& r) {
                   return fmt(r.fool_ds) + "/" + fmt(r.fool_fd) + "/" + fmt(r.fool_data) + "/" + fmt(r.fool_wb, 3);
                 }));
    }
    {
      const int n = count(rs, [](auto& r) { return r.tv_ds <= r.tv_fd; });
      report(11, n >= 3,
             "ds tv <= fd tv on " + std::to_string(n) + "/5; ds/fd " +
                 list(rs, [](auto& r) { return fmt(r.tv_ds, 3) + "/" + fmt(r.tv_fd, 3); }));
    }
    {
      bool same = true;
      std::string which;
      for (const char* run : {"ds_soft", "fd_hard"}) {
        const std::string method = std::string(run).substr(0, 2) == "ds" ? "dual_students" : "dfme_fd";
        const std::string mode = std::string(run).find("soft") != std::string::npos ? "soft" : "hard";
        const fs::path again = g_root / "rerun" / run;
        run_or_throw(make_spec(desk_ini(1, mode, method), "extract", again,
                               {{"extraction.check_triangle", method == "dual_students" ? "true" : "false"}}));
        const bool eq = detail::read_text(again / "metrics.csv") ==
                        detail::read_text(g_root / "seed_1" / run / "metrics.csv");
        same = same && eq;
        which += std::string(" ") + run + (eq ? "=identical" : "=differs");
      }
      report(12, same, "metrics.csv rerun with seed 1:" + which);
    }
    }
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::sort(g_lines.begin(), g_lines.end(), [](auto& a, auto& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary\n");
  for (const auto& l : g_lines) {
    std::printf("criterion %2d: %s\n", l.id, l.pass ? "PASS" : "FAIL");
    failed += !l.pass;
  }
  return failed == 0 ? 0 : 1;
}
