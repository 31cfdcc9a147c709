#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;
namespace fs = std::filesystem;

namespace {

struct Output {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Output cli(const std::string& args) {
  std::string cmd = std::string(DISLAB_CLI) + " " + args + " 2>&1";
  Output o;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return o;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), n);
  int st = pclose(p);
  o.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return o;
}

std::string fix(const std::string& name) { return fixture_path(name); }
std::string gt(const std::string& name) { return (corpus_dir() / (name + ".gt")).string(); }

fs::path scratch(const std::string& leaf) {
  fs::path d = fs::path(::testing::TempDir()) / ("dislab_cli_" + leaf);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, DisasmWritesRecord) {
  fs::path d = scratch("disasm");
  fs::path out = d / "r.txt";
  Output o = cli("disasm " + fix("clean_code") + " -p ghidra -o " + out.string());
  ASSERT_EQ(o.code, 0) << o.out;
  Record r = load_record(out.string());
  EXPECT_EQ(r.instructions.size(), truth("clean_code").instructions.size());
  bool echoed = false;
  for (const auto& [k, v] : r.config) echoed |= k == "cfg.jt_strategy" && v == "path_ghidra";
  EXPECT_TRUE(echoed);
}

TEST(Cli, DisasmOverridesAndConfigFile) {
  fs::path d = scratch("cfgfile");
  fs::path conf = d / "c.conf";
  std::ofstream(conf) << "recursive.prologue_match = true\n";
  Output o = cli("disasm " + fix("listing11_prologue") + " --config " + conf.string());
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("[func] 804840f prologue"), std::string::npos);
  o = cli("disasm " + fix("listing11_prologue") + " --config " + conf.string() +
          " --set recursive.prologue_match=false");
  ASSERT_EQ(o.code, 0);
  EXPECT_EQ(o.out.find("804840f prologue"), std::string::npos);
}

TEST(Cli, EvalPrintsPhases) {
  Output o = cli("eval " + gt("clean_code") + " " + gt("clean_code") + " --phases inst,func");
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("inst "), std::string::npos);
  EXPECT_NE(o.out.find("1.0000    1.0000"), std::string::npos);
  EXPECT_EQ(o.out.find("jtab"), std::string::npos);
}

TEST(Cli, EvalAttributes) {
  fs::path d = scratch("attr");
  fs::path out = d / "r.txt";
  ASSERT_EQ(cli("disasm " + fix("listing2_data_in_code") + " -p objdump -o " + out.string()).code,
            0);
  Output o = cli("eval " + gt("listing2_data_in_code") + " " + out.string() +
                 " --phases inst --attribute --binary " + fix("listing2_data_in_code"));
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("attr inst FP"), std::string::npos);
  EXPECT_NE(o.out.find("cause=Data"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("disasm").code, 1);
  EXPECT_EQ(cli("disasm " + fix("clean_code") + " -p ida").code, 1);
  EXPECT_EQ(cli("disasm " + fix("clean_code") + " --set cfg.nope=1").code, 1);
  EXPECT_EQ(cli("disasm /nonexistent/file").code, 2);
  EXPECT_EQ(cli("eval /nonexistent.gt " + gt("clean_code")).code, 2);
  EXPECT_EQ(cli("eval " + gt("clean_code") + " " + gt("clean_code") + " --phases bogus").code, 1);
  EXPECT_EQ(cli("matrix /nonexistent").code, 2);
  EXPECT_EQ(cli("strategies other").code, 1);
}

TEST(Cli, MalformedResultReportsLine) {
  fs::path d = scratch("bad");
  fs::path bad = d / "bad.txt";
  std::ofstream(bad) << "[inst] 1000 1\n[inst] zz 1\n";
  Output o = cli("eval " + gt("clean_code") + " " + bad.string());
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.out.find("line 2"), std::string::npos);
}

TEST(Cli, StrategiesList) {
  Output o = cli("strategies list");
  ASSERT_EQ(o.code, 0);
  for (const auto& p : profile_names()) EXPECT_NE(o.out.find(p), std::string::npos);
  for (const auto& f : flag_catalog()) EXPECT_NE(o.out.find(f.key), std::string::npos);
}

TEST(Cli, MatrixWritesReports) {
  fs::path d = scratch("matrix");
  Output o = cli("matrix " + corpus_dir().string() + " --profiles pure,objdump -o " + d.string());
  ASSERT_EQ(o.code, 0) << o.out;
  for (const char* f : {"report.txt", "report.csv", "ablation.csv", "per_binary.csv"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  std::string per = slurp(d / "per_binary.csv");
  EXPECT_NE(per.find("pure,clean_code,inst,"), std::string::npos);
  EXPECT_NE(per.find("objdump,mixed1,inst,"), std::string::npos);
  EXPECT_EQ(per.find("objdump,mixed1,func,"), std::string::npos);
  EXPECT_NE(slurp(d / "ablation.csv").find("objdump"), std::string::npos);
}
