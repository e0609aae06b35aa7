// duet: command-line front end. Each subcommand runs one task; settings come
// from an optional INI file followed by --section.key=value overrides.

#include <iostream>

#include "CLI11.hpp"
#include "duet/duet.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

duet::RunSpec build_spec(const std::string& task, const Common& c, const std::vector<std::string>& extras) {
  duet::ConfigEntries entries;
  if (!c.config.empty()) entries = duet::read_config_file(c.config);
  for (const auto& arg : extras) {
    auto kv = duet::parse_override(arg);
    if (!kv) throw duet::ConfigError("unrecognized argument '" + arg + "'");
    entries.push_back(*kv);
  }
  entries.emplace_back("run.task", task);
  if (c.seed) entries.emplace_back("run.seed", std::to_string(*c.seed));
  if (!c.out.empty()) entries.emplace_back("run.output_dir", c.out);
  return duet::resolve_config(entries);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-free model extraction with dual students"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> tasks{
      {"train-target", "train the victim classifier and save it"},
      {"extract", "run an extraction (dual students or forward differences)"},
      {"finetune", "continue from a pretrained student with dual students"},
      {"grad-fidelity", "measure gradient fidelity of a finished run"},
      {"attack", "transfer attacks from a proxy onto the target"},
      {"report", "rebuild report.txt from an output directory"},
  };
  Common common;
  for (const auto& [name, help] : tasks) {
    auto* sub = app.add_subcommand(name, help);
    sub->allow_extras();
    sub->add_option("-c,--config", common.config, "INI configuration file");
    sub->add_option("-o,--out", common.out, "output directory");
    sub->add_option("-s,--seed", common.seed, "root seed");
    sub->footer("Any key can be overridden with --section.key=value, e.g. --extraction.query_budget=200000");
  }
  CLI11_PARSE(app, argc, argv);
  auto* sub = app.get_subcommands().front();
  duet::RunSpec spec;
  try {
    spec = build_spec(sub->get_name(), common, sub->remaining());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return duet::run_task(spec, std::cout);
}
