#include <gtest/gtest.h>

#include "dislab/record.hpp"
#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;

namespace {

std::size_t error_line(const std::string& text) {
  try {
    parse_record(text);
  } catch (const FormatError& e) {
    return e.line;
  }
  return 0;
}

}  // namespace

TEST(Record, ParsesEveryTag) {
  Record r = parse_record(
      "# config: cfg.jt_strategy = none\n"
      "# phases: inst jtab\n"
      "[main] 40e0e2\n"
      "[inst] 1000 5 seed_reachable\n"
      "[inst] 1005 1  # trailing comment\n"
      "[pad] 1006 2\n"
      "[func] 1000 symbol\n"
      "[xref] c2d 1000 2000 4\n"
      "[jtab] 1008 3000 4 1010 1020\n"
      "[junres] 1030 no_bound\n"
      "[edge] 1000 1010\n"
      "[cg] 1000 1040\n"
      "[tcall] 1050 1040\n"
      "[noret] 1040\n"
      "[reject] 3000 ffff magic_value\n");
  ASSERT_EQ(r.config.size(), 1u);
  EXPECT_EQ(r.config[0].first, "cfg.jt_strategy");
  EXPECT_TRUE(r.has_phase(Phase::jtab));
  EXPECT_FALSE(r.has_phase(Phase::cg));
  EXPECT_EQ(r.main, std::optional<Addr>(0x40e0e2));
  EXPECT_EQ(r.instructions.at(0x1000).tag, "seed_reachable");
  EXPECT_EQ(r.instructions.at(0x1005).size, 1u);
  EXPECT_TRUE(r.in_padding(0x1007));
  EXPECT_FALSE(r.in_padding(0x1008));
  EXPECT_EQ(r.tables.at(0x1008).targets, (std::vector<Addr>{0x1010, 0x1020}));
  EXPECT_EQ(r.unresolved_tables.at(0x1030), "no_bound");
  EXPECT_TRUE(r.xrefs.count(Xref{0x1000, 0x2000, XrefKind::c2d}));
  EXPECT_TRUE(r.rejects.count({0x3000, 0xffff, "magic_value"}));
  EXPECT_EQ(r.instruction_covering(0x1003)->first, 0x1000u);
  EXPECT_EQ(r.instruction_covering(0x1006), nullptr);
}

TEST(Record, NoPhasesLineMeansAll) {
  Record r = parse_record("[inst] 10 1\n");
  for (Phase p : all_phases()) EXPECT_TRUE(r.has_phase(p));
}

TEST(Record, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("[inst] 10 1\n[bogus] 1\n"), 2u);
  EXPECT_EQ(error_line("\n\n[inst] zz 1\n"), 3u);
  EXPECT_EQ(error_line("[inst] 10 0\n"), 1u);
  EXPECT_EQ(error_line("[inst] 10 1\n[inst] 10 1\n"), 2u);
  EXPECT_EQ(error_line("[inst] 10 4\n[inst] 12 1\n"), 2u);
  EXPECT_EQ(error_line("[xref] q2d 1 2 4\n"), 1u);
  EXPECT_EQ(error_line("[cg] 1\n"), 1u);
  EXPECT_EQ(error_line("# phases: inst bogus\n"), 1u);
  EXPECT_THROW(parse_record("[inst] 10 4\n[pad] 12 2\n"), FormatError);
}

TEST(Record, RoundTripsTruthFiles) {
  for (const auto& name : all_fixtures()) {
    Record t = truth(name);
    std::string text = emit_record(t);
    Record back = parse_record(text);
    EXPECT_EQ(emit_record(back), text) << name;
    EXPECT_EQ(back.instructions, t.instructions) << name;
    EXPECT_EQ(back.xrefs, t.xrefs) << name;
    EXPECT_EQ(back.tables, t.tables) << name;
  }
}

TEST(Record, RoundTripsAnalysisOutput) {
  for (const char* prof : {"objdump", "ghidra", "angr", "dyninst"}) {
    Record r = run_record("mixed2", prof);
    std::string text = emit_record(r);
    EXPECT_EQ(emit_record(parse_record(text)), text) << prof;
  }
}

TEST(Record, LinearResultsOmitRecursivePhases) {
  Record r = run_record("clean_code", "objdump");
  ASSERT_TRUE(r.phases);
  EXPECT_EQ(*r.phases, std::set<Phase>{Phase::inst});
  Record u = run_record("clean_code", "uroboros");
  EXPECT_EQ(*u.phases, (std::set<Phase>{Phase::inst, Phase::xref}));
  Record g = run_record("clean_code", "ghidra");
  EXPECT_TRUE(g.has_phase(Phase::jtab));
  EXPECT_TRUE(g.has_phase(Phase::xref));
}

TEST(Record, PhaseNames) {
  for (Phase p : all_phases()) EXPECT_EQ(phase_from(to_string(p)), std::optional<Phase>(p));
  EXPECT_FALSE(phase_from("instr"));
}
