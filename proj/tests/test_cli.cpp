#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "tiny_run.hpp"

using namespace litepath::testing;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "litepath_cli_io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  const fs::path err = dir / ("err" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(LITEPATH_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Writes the tiny config next to its output directory and returns the --config argument.
std::string tiny_ini(const fs::path& out) {
  fs::create_directories(out);
  const fs::path ini = out / "tiny.ini";
  std::ofstream(ini) << tiny_config(out).to_ini();
  return "--config " + ini.string();
}

std::string without_comments(const std::string& text) {
  std::string kept, line;
  std::istringstream is(text);
  while (std::getline(is, line))
    if (line.rfind("#", 0) != 0) kept += line + "\n";
  return kept;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("flops").code, 1);
  EXPECT_EQ(cli("flops --config default --no-such-flag").code, 1);
  EXPECT_EQ(cli("infer --config desk --mode sideways").code, 1);
  EXPECT_EQ(cli("bogus --config desk").code, 1);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const CliRun bad = cli("flops --config no_such_config");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);
  const fs::path out = fresh_dir("cli_missing");
  EXPECT_EQ(cli("train-mil " + tiny_ini(out)).code, 2);
  EXPECT_EQ(cli("dscore --config desk --input " + (out / "absent.tsv").string()).code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(cli("--help").code, 0); }

TEST(Cli, FlopsBreakdownForDefaultEncoder) {
  const fs::path out = fresh_dir("cli_flops");
  fs::create_directories(out);
  const CliRun r = cli("flops --config default --curve-out " + (out / "curve.tsv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("4.241 GFLOPs"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("asymptotic relative FLOPs 0.0959"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out / "curve.tsv"));
  EXPECT_NE(slurp(out / "curve.tsv").find("# config_hash="), std::string::npos);
}

TEST(Cli, DscoreFromTable) {
  const fs::path out = fresh_dir("cli_dscore");
  fs::create_directories(out);
  std::ofstream(out / "models.tsv") << "model\tauc\tflops\nworst\t0.70\t1e9\nbest\t0.90\t1e10\nbig\t0.80\t1e11\n";
  const CliRun r = cli("dscore --config desk --input " + (out / "models.tsv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0.00000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("0.93303"), std::string::npos) << r.out;
}

TEST(Cli, TinyPipelineEndToEnd) {
  const fs::path out = fresh_dir("cli_pipeline");
  const std::string cfg = tiny_ini(out);
  for (const char* stage : {"gen", "distill", "train-mil", "train-aps", "grid"}) {
    const CliRun r = cli(std::string(stage) + " " + cfg);
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  EXPECT_TRUE(fs::exists(out / "selection.json"));

  ASSERT_EQ(cli("infer " + cfg + " --mode full").code, 0);
  ASSERT_EQ(cli("infer " + cfg + " --mode litepath").code, 0);
  const fs::path saturated = out / "saturated.tsv";
  ASSERT_EQ(cli("infer " + cfg + " --mode litepath --ku 100000 --ka 0 --out " + saturated.string()).code, 0);
  EXPECT_EQ(without_comments(slurp(saturated)), without_comments(slurp(out / "predictions" / "full.tsv")));

  const CliRun ev = cli("eval " + cfg);
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("non-inferiority"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "eval.json"));

  const CliRun ds = cli("dscore " + cfg);
  ASSERT_EQ(ds.code, 0) << ds.err;
  EXPECT_NE(ds.out.find("litepath"), std::string::npos);

  const CliRun b = cli("bench " + cfg);
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(b.out.find("speedup"), std::string::npos);

  const CliRun rep = cli("report " + cfg);
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(out / "report" / "report.json"));
  EXPECT_TRUE(fs::exists(out / "report" / "report.txt"));
}

TEST(Cli, SeedOverrideChangesCohort) {
  const fs::path a = fresh_dir("cli_seed_a"), b = fresh_dir("cli_seed_b");
  ASSERT_EQ(cli("gen " + tiny_ini(a)).code, 0);
  ASSERT_EQ(cli("gen " + tiny_ini(b) + " --seed 7").code, 0);
  ASSERT_EQ(cli("gen " + tiny_ini(b) + " --seed 7 --output-dir " + (b / "again").string()).code, 0);
  EXPECT_NE(without_comments(slurp(a / "cohort" / "manifest.tsv")), without_comments(slurp(b / "cohort" / "manifest.tsv")));
  EXPECT_EQ(slurp(b / "cohort" / "manifest.tsv"), slurp(b / "again" / "cohort" / "manifest.tsv"));
}
