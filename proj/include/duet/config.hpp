#pragma once

// Run configuration: sectioned key = value text.
//
//   [run]         task, seed, output_dir
//   [dataset]     DatasetSpec
//   [target]      TargetConfig plus an optional checkpoint path
//   [extraction]  ExtractionConfig
//   [finetune]    pretrained checkpoint
//   [eval]        evaluation sizes and switches
//   [attack]      attack grid and proxy choice
//
// '#' and ';' start comments. Unknown sections or keys are errors. The
// resolved configuration (defaults included) is written back in the same
// format, so it can be fed to --config to reproduce a run.

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "duet/attacks.hpp"
#include "duet/data.hpp"
#include "duet/evaluation.hpp"
#include "duet/extraction.hpp"
#include "duet/target.hpp"

namespace duet {

struct EvalConfig {
  std::size_t n_generated = 10000;  // generated samples per evaluation point
  GradNormalization normalization = GradNormalization::gradient;
  std::vector<double> thresholds{0.5, 0.75, 0.9, 0.95};
  std::string run_dir;  // grad-fidelity / attack: extraction output to read
};

struct AttackSpec {
  std::vector<AttackKind> kinds{AttackKind::fgsm, AttackKind::bim, AttackKind::pgd};
  std::vector<double> epsilon_fractions{0.01, 0.125};  // of the mean feature range
  std::vector<bool> targeted{false, true};
  std::size_t steps = 10;
  double step_fraction = 0.25;  // step size as a fraction of epsilon
  bool random_start = true;
  std::string proxy = "student";  // student | whitebox | data
  std::vector<std::size_t> data_proxy_hidden{32, 32};
};

struct RunSpec {
  std::string task = "extract";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetSpec dataset;
  TargetConfig target;
  std::string target_checkpoint;  // empty: train the target from the seed
  ExtractionConfig extraction;
  std::string pretrained;  // finetune: student checkpoint
  EvalConfig eval;
  AttackSpec attack;
};

inline const std::vector<std::string>& known_tasks() {
  static const std::vector<std::string> t{"train-target", "extract", "finetune", "grad-fidelity", "attack", "report"};
  return t;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F&& f) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(f(key, item));
  return out;
}

inline std::size_t to_size(const std::string& k, const std::string& v) {
  return static_cast<std::size_t>(parse_uint(k, v));
}

struct Field {
  std::string name;  // section.key
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename E, typename P, typename S>
Field enum_field(std::string name, E& ref, P parse, S show) {
  return {name, [&ref, show] { return std::string(show(ref)); },
          [&ref, parse, name](const std::string& v) {
            try {
              ref = parse(v);
            } catch (const std::exception& e) {
              throw ConfigError(name + ": " + e.what());
            }
          }};
}

inline Field double_field(std::string name, double& ref) {
  return {name, [&ref] { return fmt_double(ref); }, [&ref, name](const std::string& v) { ref = parse_double(name, v); }};
}

inline Field size_field(std::string name, std::size_t& ref) {
  return {name, [&ref] { return std::to_string(ref); }, [&ref, name](const std::string& v) { ref = to_size(name, v); }};
}

inline Field u64_field(std::string name, std::uint64_t& ref) {
  return {name, [&ref] { return std::to_string(ref); }, [&ref, name](const std::string& v) { ref = parse_uint(name, v); }};
}

inline Field bool_field(std::string name, bool& ref) {
  return {name, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, name](const std::string& v) { ref = parse_bool(name, v); }};
}

inline Field string_field(std::string name, std::string& ref) {
  return {name, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

inline Field sizes_field(std::string name, std::vector<std::size_t>& ref) {
  return {name, [&ref] { return join(ref, [](std::size_t v) { return std::to_string(v); }); },
          [&ref, name](const std::string& v) { ref = parse_list<std::size_t>(name, v, to_size); }};
}

inline std::vector<Field> fields(RunSpec& s) {
  auto& d = s.dataset;
  auto& t = s.target;
  auto& x = s.extraction;
  auto& e = s.eval;
  auto& a = s.attack;
  return {
      string_field("run.task", s.task),
      u64_field("run.seed", s.seed),
      string_field("run.output_dir", s.output_dir),
      enum_field("dataset.source", d.source, parse_data_source, [](DataSource v) { return to_string(v); }),
      size_field("dataset.n_classes", d.n_classes),
      size_field("dataset.dim", d.dim),
      size_field("dataset.n_train", d.n_train),
      size_field("dataset.n_test", d.n_test),
      double_field("dataset.noise", d.noise),
      double_field("dataset.separation", d.separation),
      string_field("dataset.csv_path", d.csv_path),
      sizes_field("target.hidden", t.hidden),
      size_field("target.epochs", t.epochs),
      size_field("target.batch", t.batch),
      double_field("target.lr", t.lr),
      double_field("target.momentum", t.momentum),
      double_field("target.weight_decay", t.weight_decay),
      double_field("target.accuracy_floor", t.accuracy_floor),
      string_field("target.checkpoint", s.target_checkpoint),
      enum_field("extraction.method", x.method, parse_method, [](Method v) { return to_string(v); }),
      size_field("extraction.epochs", x.epochs),
      size_field("extraction.generator_iters", x.generator_iters),
      size_field("extraction.student_iters", x.student_iters),
      size_field("extraction.batch", x.batch),
      size_field("extraction.latent_dim", x.latent_dim),
      double_field("extraction.lr_generator", x.lr_generator),
      double_field("extraction.lr_student", x.lr_student),
      double_field("extraction.momentum", x.momentum),
      double_field("extraction.weight_decay", x.weight_decay),
      double_field("extraction.ema_decay", x.ema_decay),
      enum_field("extraction.label_mode", x.label_mode, parse_label_mode, [](LabelMode v) { return to_string(v); }),
      enum_field("extraction.student_loss", x.student_loss, parse_loss_kind, [](LossKind v) { return to_string(v); }),
      enum_field("extraction.generator_loss", x.generator_loss, parse_loss_kind,
                 [](LossKind v) { return to_string(v); }),
      size_field("extraction.fd_directions", x.fd_directions),
      double_field("extraction.fd_step", x.fd_step),
      {"extraction.query_budget", [&x] { return x.query_budget ? std::to_string(*x.query_budget) : "none"; },
       [&x](const std::string& v) {
         if (v == "none")
           x.query_budget.reset();
         else
           x.query_budget = parse_uint("extraction.query_budget", v);
       }},
      bool_field("extraction.unknown_classes", x.unknown_classes),
      size_field("extraction.max_classes", x.max_classes),
      double_field("extraction.margin", x.margin),
      double_field("extraction.eval_fraction", x.eval_fraction),
      bool_field("extraction.check_triangle", x.check_triangle),
      sizes_field("extraction.student_hidden", x.arch.student_hidden),
      sizes_field("extraction.generator_hidden", x.arch.generator_hidden),
      bool_field("extraction.generator_batch_norm", x.arch.generator_batch_norm),
      string_field("finetune.pretrained", s.pretrained),
      size_field("eval.n_generated", e.n_generated),
      enum_field("eval.grad_normalization", e.normalization, parse_grad_normalization,
                 [](GradNormalization v) { return to_string(v); }),
      {"eval.thresholds", [&e] { return join(e.thresholds, fmt_double); },
       [&e](const std::string& v) { e.thresholds = parse_list<double>("eval.thresholds", v, parse_double); }},
      string_field("eval.run_dir", e.run_dir),
      {"attack.kinds", [&a] { return join(a.kinds, [](AttackKind k) { return std::string(to_string(k)); }); },
       [&a](const std::string& v) {
         a.kinds = parse_list<AttackKind>("attack.kinds", v, [](const std::string& k, const std::string& item) {
           try {
             return parse_attack_kind(item);
           } catch (const std::exception& err) {
             throw ConfigError(k + ": " + err.what());
           }
         });
       }},
      {"attack.epsilon_fractions", [&a] { return join(a.epsilon_fractions, fmt_double); },
       [&a](const std::string& v) {
         a.epsilon_fractions = parse_list<double>("attack.epsilon_fractions", v, parse_double);
       }},
      {"attack.targeted", [&a] { return join(a.targeted, [](bool b) { return std::string(b ? "true" : "false"); }); },
       [&a](const std::string& v) { a.targeted = parse_list<bool>("attack.targeted", v, parse_bool); }},
      size_field("attack.steps", a.steps),
      double_field("attack.step_fraction", a.step_fraction),
      bool_field("attack.random_start", a.random_start),
      string_field("attack.proxy", a.proxy),
      sizes_field("attack.data_proxy_hidden", a.data_proxy_hidden),
  };
}

}  // namespace detail

/// Ordered key/value pairs, "section.key" -> raw value.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigEntries out;
  std::istringstream is(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    out.emplace_back(section + "." + key, detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline ConfigEntries read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

/// Builds a RunSpec from entries applied in order (later entries win).
/// Label-mode dependent extraction defaults are applied before any explicit
/// extraction key, so e.g. label_mode = hard alone switches the student loss
/// to ce and the student lr to 0.05.
inline RunSpec resolve_config(const ConfigEntries& entries) {
  RunSpec spec;
  std::map<std::string, std::string> last;
  for (const auto& [k, v] : entries) last[k] = v;
  {
    RunSpec probe;
    auto fs = detail::fields(probe);
    for (auto& f : fs)
      if ((f.name == "extraction.label_mode" || f.name == "extraction.method") && last.count(f.name))
        f.set(last[f.name]);
    spec.extraction = ExtractionConfig::defaults_for(probe.extraction.label_mode, probe.extraction.method);
  }
  auto fs = detail::fields(spec);
  std::map<std::string, detail::Field*> by_name;
  for (auto& f : fs) by_name[f.name] = &f;
  for (const auto& [k, v] : entries) {
    auto it = by_name.find(k);
    if (it == by_name.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second->set(v);
  }
  spec.extraction.seed = spec.seed;
  bool known = false;
  for (const auto& t : known_tasks()) known = known || t == spec.task;
  if (!known) throw ConfigError("run.task: unknown task '" + spec.task + "'");
  return spec;
}

/// Fully resolved configuration in the input format.
inline std::string echo_config(const RunSpec& spec) {
  RunSpec copy = spec;
  std::string out, section;
  for (const auto& f : detail::fields(copy)) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += f.name.substr(dot + 1) + " = " + f.get() + "\n";
  }
  return out;
}

/// "--section.key=value" style override; returns nullopt for other arguments.
inline std::optional<std::pair<std::string, std::string>> parse_override(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return std::nullopt;
  const auto eq = arg.find('=');
  const std::string key = arg.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
  if (key.find('.') == std::string::npos) return std::nullopt;
  if (eq == std::string::npos) throw ConfigError("override " + arg + " needs =value");
  return std::make_pair(key, arg.substr(eq + 1));
}

/// Attack grid expanded to concrete configs for a given data range.
inline std::vector<AttackConfig> expand_attacks(const AttackSpec& a, double data_range) {
  std::vector<AttackConfig> out;
  for (AttackKind k : a.kinds)
    for (double f : a.epsilon_fractions)
      for (bool t : a.targeted) {
        AttackConfig c;
        c.kind = k;
        c.epsilon = f * data_range;
        c.steps = a.steps;
        c.step_size = a.step_fraction * c.epsilon;
        c.targeted = t;
        c.random_start = a.random_start;
        out.push_back(c);
      }
  return out;
}

}  // namespace duet
