#include <gtest/gtest.h>

#include "dislab/recursive.hpp"
#include "dislab/sweep.hpp"
#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;

namespace {

DisasmResult descend(const BinaryImage& img, const StrategyConfig& cfg,
                     const CfgHooks& hooks = {}) {
  return recursive_descent(img, symbol_seeds(img), hooks, cfg);
}

}  // namespace

TEST(Descent, FollowsControlFlowOnly) {
  BinaryImage img = fixture("listing11_prologue");
  Record t = truth("listing11_prologue");
  auto r = descend(img, profile("pure"));
  for (const auto& [a, ins] : r.instructions) EXPECT_TRUE(t.instructions.count(a));
  // orphan is never reached; g is, through the jump.
  EXPECT_FALSE(r.instructions.count(0x804840f));
  EXPECT_TRUE(r.instructions.count(0x8048419));
  auto gaps = gap_regions(r, img);
  ASSERT_FALSE(gaps.empty());
  EXPECT_EQ(gaps[0].start, 0x804840fu);
}

TEST(Descent, ReachesEveryInstructionOfCleanCode) {
  BinaryImage img = fixture("clean_code");
  Record t = truth("clean_code");
  auto r = descend(img, profile("pure"));
  EXPECT_EQ(r.instructions.size(), t.instructions.size());
  for (const auto& [a, p] : r.provenance) EXPECT_EQ(p, Provenance::seed_reachable);
  EXPECT_TRUE(r.failures.empty());
}

TEST(Descent, BlocksPartitionInstructions) {
  for (const auto& name : all_fixtures()) {
    SCOPED_TRACE(name);
    BinaryImage img = fixture(name);
    auto r = descend(img, profile("pure"));
    std::size_t covered = 0;
    for (std::size_t i = 0; i < r.blocks.size(); ++i) {
      const BasicBlock& b = r.blocks[i];
      EXPECT_LT(b.start, b.end);
      if (i) EXPECT_LE(r.blocks[i - 1].end, b.start);
      for (auto it = r.instructions.lower_bound(b.start);
           it != r.instructions.end() && it->first < b.end; ++it)
        ++covered;
    }
    EXPECT_EQ(covered, r.instructions.size());
  }
}

TEST(Descent, NonReturningCallsStopFallthrough) {
  BinaryImage img = fixture("listing8_cascade");
  Record t = truth("listing8_cascade");
  StrategyConfig cfg = profile("pure");
  auto plain = descend(img, cfg);
  CfgHooks hooks;
  hooks.nonreturning = {sym(img, "exit"), sym(img, "f1")};
  auto stopped = descend(img, cfg, hooks);
  EXPECT_LT(stopped.instructions.size(), plain.instructions.size());
  for (const auto& [a, ins] : stopped.instructions) EXPECT_TRUE(t.instructions.count(a));
}

TEST(Descent, JumpTargetsHookAddsSuccessors) {
  BinaryImage img = fixture("fig4a_jtab");
  Record t = truth("fig4a_jtab");
  ASSERT_EQ(t.tables.size(), 1u);
  const TableRecord& tab = t.tables.begin()->second;
  StrategyConfig cfg = profile("pure");
  auto before = descend(img, cfg);
  for (Addr x : tab.targets) EXPECT_FALSE(before.instructions.count(x));
  EXPECT_NE(std::find(before.pending_indirect.begin(), before.pending_indirect.end(),
                      tab.site),
            before.pending_indirect.end());
  CfgHooks hooks;
  hooks.jump_targets[tab.site] = tab.targets;
  auto after = descend(img, cfg, hooks);
  for (Addr x : tab.targets) {
    EXPECT_TRUE(after.instructions.count(x));
    EXPECT_NE(after.block_at(x), nullptr);
  }
  EXPECT_EQ(std::find(after.pending_indirect.begin(), after.pending_indirect.end(),
                      tab.site),
            after.pending_indirect.end());
}

TEST(Gaps, PrologueMatchFindsFramePrologue) {
  BinaryImage img = fixture("listing11_prologue");
  StrategyConfig cfg = profile("pure");
  cfg.prologue_match = true;
  auto r = apply_gap_heuristics(descend(img, cfg), img, cfg);
  EXPECT_EQ(r.prologue_hits, std::vector<Addr>{0x804840f});
  EXPECT_EQ(r.provenance.at(0x804840f), Provenance::prologue_match);
}

TEST(Gaps, AlteredPrologueNeedsAggressiveSet) {
  BinaryImage img = fixture("listing11_altered");
  StrategyConfig cfg = profile("pure");
  cfg.prologue_match = true;
  auto strict = apply_gap_heuristics(descend(img, cfg), img, cfg);
  EXPECT_TRUE(strict.prologue_hits.empty());
  cfg.prologue_set = PrologueSet::aggressive;
  auto aggr = apply_gap_heuristics(descend(img, cfg), img, cfg);
  EXPECT_EQ(aggr.prologue_hits, std::vector<Addr>{0x804840f});
}

TEST(Gaps, ScanPicksUpUnreferencedCode) {
  BinaryImage img = fixture("listing11_altered");
  Record t = truth("listing11_altered");
  StrategyConfig cfg = profile("pure");
  cfg.gap_scan = true;
  auto r = apply_gap_heuristics(descend(img, cfg), img, cfg);
  EXPECT_FALSE(r.scan_begins.empty());
  for (const auto& [a, ins] : t.instructions) EXPECT_TRUE(r.instructions.count(a));
}

TEST(Gaps, XrefSeedIntoBadBytesRollsBack) {
  BinaryImage img = fixture("xref_seed_rollback");
  Record t = truth("xref_seed_rollback");
  StrategyConfig cfg = profile("pure");
  cfg.xref_seed = true;
  auto base = descend(img, cfg);
  auto r = apply_gap_heuristics(base, img, cfg);
  EXPECT_EQ(r.instructions.size(), base.instructions.size());
  EXPECT_TRUE(r.xref_seeds.empty());
  for (const auto& [a, ins] : r.instructions) EXPECT_TRUE(t.instructions.count(a));
}

TEST(FromSweep, KeepsEveryInstruction) {
  BinaryImage img = fixture("clean_code");
  std::vector<Range> ranges;
  for (const auto& s : img.sections)
    if (s.executable) ranges.push_back({s.vaddr, s.size});
  auto sw = linear_sweep(img, ranges, SweepPolicy::skip_byte);
  auto r = from_sweep(sw);
  EXPECT_EQ(r.instructions.size(), sw.instructions.size());
  for (const auto& [a, p] : r.provenance) EXPECT_EQ(p, Provenance::linear);
  EXPECT_FALSE(r.blocks.empty());
}
