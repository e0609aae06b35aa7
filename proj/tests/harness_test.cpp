#include <gtest/gtest.h>

#include <sstream>

#include "duet/harness.hpp"

namespace duet {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("duet_harness_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) { return detail::read_text(p); }

ConfigEntries small_run(const fs::path& out, const std::string& task = "extract") {
  return parse_config_text(
      "[run]\n"
      "seed = 5\n"
      "task = " + task + "\n"
      "output_dir = " + out.string() + "\n"
      "[dataset]\n"
      "n_train = 400\n"
      "n_test = 300\n"
      "[target]\n"
      "hidden = 16\n"
      "epochs = 10\n"
      "[extraction]\n"
      "epochs = 4\n"
      "query_budget = none\n"
      "batch = 32\n"
      "lr_student = 0.003\n"
      "[eval]\n"
      "n_generated = 200\n");
}

TEST(Config, UnknownKeyAndMalformedLinesAreReported) {
  EXPECT_THROW(resolve_config({{"extraction.student_lr", "0.1"}}), ConfigError);
  try {
    parse_config_text("[run]\nseed = 1\nbroken line\n", "x.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("seed = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[run\n"), ConfigError);
  EXPECT_THROW(resolve_config({{"run.task", "dance"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"extraction.batch", "many"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"attack.kinds", "pgd,cw"}}), ConfigError);
}

TEST(Config, EchoRoundTripsAndLaterEntriesWin) {
  ConfigEntries e = {{"extraction.label_mode", "hard"}, {"extraction.batch", "64"}, {"extraction.batch", "128"},
                     {"attack.targeted", "false,true"}, {"eval.thresholds", "0.5,0.75"}};
  const RunSpec a = resolve_config(e);
  EXPECT_EQ(a.extraction.batch, 128u);
  EXPECT_EQ(a.extraction.student_loss, LossKind::ce);
  const std::string text = echo_config(a);
  const RunSpec b = resolve_config(parse_config_text(text));
  EXPECT_EQ(echo_config(b), text);
}

TEST(Config, OverrideArguments) {
  const auto kv = parse_override("--extraction.batch=64");
  ASSERT_TRUE(kv);
  EXPECT_EQ(kv->first, "extraction.batch");
  EXPECT_EQ(kv->second, "64");
  EXPECT_FALSE(parse_override("--verbose"));
  EXPECT_FALSE(parse_override("plain"));
  EXPECT_THROW(parse_override("--extraction.batch"), ConfigError);
}

TEST(Harness, ExtractWritesOutputsAndReportIsRegenerable) {
  const fs::path out = scratch("extract");
  std::ostringstream log;
  ASSERT_EQ(run_task(resolve_config(small_run(out)), log), 0) << log.str();
  for (const char* f : {"config.ini", "metrics.csv", "ledger.json", "report.txt", "s1.ckpt", "s2.ckpt",
                        "s1_ema.ckpt", "s2_ema.ckpt", "generator.ckpt", "target.ckpt", "target.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_FALSE(fs::exists(out / "error.txt"));

  const auto ledger = nlohmann::json::parse(slurp(out / "ledger.json"));
  EXPECT_EQ(ledger["total_samples"].get<std::uint64_t>(), 4u * 5 * 32);

  const std::string first = slurp(out / "report.txt");
  EXPECT_EQ(build_report(out), first);
  RunSpec rep = resolve_config(small_run(out, "report"));
  std::ostringstream log2;
  ASSERT_EQ(run_task(rep, log2), 0);
  EXPECT_EQ(slurp(out / "report.txt"), first);
}

TEST(Harness, BudgetIsRespectedInLedger) {
  const fs::path out = scratch("budget");
  ConfigEntries e = small_run(out);
  e.emplace_back("extraction.query_budget", "1000");
  e.emplace_back("extraction.epochs", "0");
  std::ostringstream log;
  ASSERT_EQ(run_task(resolve_config(e), log), 0) << log.str();
  const auto ledger = nlohmann::json::parse(slurp(out / "ledger.json"));
  EXPECT_LE(ledger["total_samples"].get<std::uint64_t>(), 1000u);
  EXPECT_EQ(ledger["budget"].get<std::uint64_t>(), 1000u);
}

TEST(Harness, RerunFromEchoedConfigReproducesMetrics) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  std::ostringstream log;
  ASSERT_EQ(run_task(resolve_config(small_run(a)), log), 0) << log.str();
  ConfigEntries e = read_config_file((a / "config.ini").string());
  e.emplace_back("run.output_dir", b.string());
  ASSERT_EQ(run_task(resolve_config(e), log), 0) << log.str();
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST(Harness, FailureWritesErrorFileAndReport) {
  const fs::path out = scratch("failure");
  ConfigEntries e = small_run(out, "finetune");
  e.emplace_back("finetune.pretrained", (out / "missing.ckpt").string());
  std::ostringstream log;
  EXPECT_NE(run_task(resolve_config(e), log), 0);
  ASSERT_TRUE(fs::exists(out / "error.txt"));
  const std::string err = slurp(out / "error.txt");
  EXPECT_FALSE(err.empty());
  EXPECT_NE(slurp(out / "report.txt").find(err.substr(0, err.size() - 1)), std::string::npos);
}

TEST(Harness, FinetuneNeedsPretrainedCheckpoint) {
  const fs::path out = scratch("finetune_none");
  std::ostringstream log;
  EXPECT_NE(run_task(resolve_config(small_run(out, "finetune")), log), 0);
  EXPECT_TRUE(fs::exists(out / "error.txt"));
}

}  // namespace
}  // namespace duet
