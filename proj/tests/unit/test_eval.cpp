#include <gtest/gtest.h>

#include "dislab/eval.hpp"
#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;

TEST(Metrics, EmptySidesScoreOne) {
  Metrics none = make_metrics(Phase::inst, 0, 0, 0);
  EXPECT_EQ(none.precision, 1.0);
  EXPECT_EQ(none.recall, 1.0);
  Metrics empty_result = make_metrics(Phase::inst, 0, 0, 4);
  EXPECT_EQ(empty_result.precision, 1.0);
  EXPECT_EQ(empty_result.recall, 0.0);
  Metrics empty_truth = make_metrics(Phase::inst, 0, 3, 0);
  EXPECT_EQ(empty_truth.precision, 0.0);
  EXPECT_EQ(empty_truth.recall, 1.0);
  Metrics m = make_metrics(Phase::cg, 3, 1, 2);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.6);
}

TEST(Score, InstructionsSkipPadding) {
  Record t, r;
  t.instructions = {{0x10, {1}}, {0x11, {2}}};
  t.padding = {{0x13, 3}};
  r.instructions = {{0x10, {1}}, {0x14, {1}}, {0x20, {1}}};
  Metrics m = score(t, r, Phase::inst);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
}

TEST(Score, XrefsFromFakeInstructionsDropped) {
  Record t, r;
  t.instructions = {{0x10, {5}}};
  t.xrefs = {Xref{0x10, 0x100, XrefKind::c2d, 4}};
  r.xrefs = {Xref{0x10, 0x100, XrefKind::c2d, 4}, Xref{0x30, 0x100, XrefKind::c2d, 4},
             Xref{0x200, 0x10, XrefKind::d2c, 8}};
  Metrics m = score(t, r, Phase::xref);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 0u);
}

TEST(Score, TailCallsToOwnEntryIgnored) {
  Record t, r;
  t.functions = {{0x10, ""}, {0x40, ""}};
  t.tail_calls = {{0x20, 0x40}};
  r.tail_calls = {{0x30, 0x10}, {0x20, 0x40}, {0x50, 0x40}};
  PhaseItems it = phase_items(t, r, Phase::tailcall);
  EXPECT_EQ(it.result.size(), 1u);
  Metrics m = score(t, r, Phase::tailcall);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 0u);
}

TEST(Score, WrongTableIsBothErrors) {
  Record t, r;
  t.tables[0x10] = {0x10, 0x100, 4, {0x20, 0x30}};
  t.tables[0x50] = {0x50, 0x200, 4, {0x60}};
  r.tables[0x10] = {0x10, 0x100, 4, {0x30, 0x20}};  // order does not matter
  r.tables[0x50] = {0x50, 0x200, 4, {0x60, 0x70}};
  Metrics m = score(t, r, Phase::jtab);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
}

TEST(Score, MissingPhaseCountsAsEmpty) {
  Record t = truth("clean_code");
  Record r = t;
  r.phases = std::set<Phase>{Phase::inst};
  EXPECT_EQ(score(t, r, Phase::inst).recall, 1.0);
  Metrics f = score(t, r, Phase::func);
  EXPECT_EQ(f.tp, 0u);
  EXPECT_EQ(f.fn, t.functions.size());
}

TEST(Score, IdentityIsPerfect) {
  for (const auto& name : all_fixtures()) {
    Record t = truth(name);
    for (Phase p : all_phases()) {
      Metrics m = score(t, t, p);
      EXPECT_EQ(m.fp, 0u) << name << " " << to_string(p);
      EXPECT_EQ(m.fn, 0u) << name << " " << to_string(p);
    }
  }
}

TEST(Attribution, VocabularyEndsWithOther) {
  for (Phase p : all_phases())
    for (bool fp : {true, false}) {
      const auto& v = cause_vocabulary(p, fp);
      ASSERT_FALSE(v.empty());
      EXPECT_EQ(v.back(), "Other");
    }
}

TEST(Attribution, OneCausePerError) {
  for (const char* name : {"listing2_data_in_code", "listing8_cascade", "mixed2"}) {
    BinaryImage img = fixture(name);
    Record t = truth(name);
    Record r = run_record(name, "objdump");
    for (Phase p : {Phase::inst, Phase::xref}) {
      Metrics m = score(t, r, p);
      auto errs = attribute_errors(t, r, p, &img);
      std::size_t fp = 0, fn = 0;
      for (const auto& e : errs) {
        (e.false_positive ? fp : fn)++;
        const auto& v = cause_vocabulary(p, e.false_positive);
        EXPECT_NE(std::find(v.begin(), v.end(), e.cause), v.end()) << e.cause;
      }
      EXPECT_EQ(fp, m.fp) << name;
      EXPECT_EQ(fn, m.fn) << name;
    }
  }
}

TEST(Attribution, PaddingAndData) {
  Record t, r;
  t.instructions = {{0x10, {1}}};
  t.padding = {{0x11, 4}};
  r.instructions = {{0x10, {1}}, {0x12, {1}}, {0x40, {1}}};
  auto errs = attribute_errors(t, r, Phase::inst);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].item[0], 0x40u);
  EXPECT_EQ(errs[0].cause, "Data");
}

TEST(Attribution, ListingTwoIsData) {
  BinaryImage img = fixture("listing2_data_in_code");
  Record t = truth("listing2_data_in_code");
  Record r = run_record("listing2_data_in_code", "objdump");
  auto errs = attribute_errors(t, r, Phase::inst, &img);
  ASSERT_FALSE(errs.empty());
  std::size_t data = 0;
  for (const auto& e : errs) data += e.false_positive && e.cause == "Data";
  EXPECT_GT(data, 0u);
}

TEST(Format, Items) {
  EXPECT_EQ(format_item(Phase::inst, {0x401000, 0, 0}), "401000");
  EXPECT_EQ(format_item(Phase::cg, {0x10, 0x20, 0}), "10 20");
  EXPECT_EQ(format_item(Phase::xref, {0x10, 0x20, Addr(XrefKind::d2c)}), "d2c 10 20");
}
