#include <gtest/gtest.h>

#include "dislab/symbolize.hpp"
#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;

namespace {

// mov $0x2000,%eax ; ret, then a data section holding a code pointer, a
// data pointer and two small integers.
const char* kImage =
    "mode x64\n"
    "section .text 1000 code b800200000c3\n"
    "section .data 2000 data "
    "00100000000000000820000000000000"
    "0500000000000000ffff000000000000\n"
    "symbol f 1000 6 func\n"
    "entry 1000\n";

struct Scene {
  BinaryImage img = parse_fixture(kImage);
  StrategyConfig cfg = profile("pure");
  DisasmResult dis;
  Scene() {
    cfg.symbolize = true;
    dis = recursive_descent(img, {0x1000}, {}, cfg);
  }
};

Candidate cand(Addr from, std::uint64_t v, CandidateOrigin o = CandidateOrigin::data_unit) {
  return {from, v, 8, from % 8 == 0, o};
}

std::optional<RejectReason> reason(const std::variant<Xref, Rejection>& r) {
  if (auto* x = std::get_if<Rejection>(&r)) return x->reason;
  return std::nullopt;
}

}  // namespace

TEST(Candidates, OperandsAndAlignedUnits) {
  Scene s;
  auto cands = extract_candidates(s.img, s.dis, s.cfg);
  std::set<std::pair<Addr, std::uint64_t>> got;
  for (const auto& c : cands) got.insert({c.from, c.value});
  EXPECT_TRUE(got.count({0x1000, 0x2000}));
  EXPECT_TRUE(got.count({0x2000, 0x1000}));
  EXPECT_TRUE(got.count({0x2008, 0x2008}));
  EXPECT_FALSE(got.count({0x2001, 0x20000000000010}));
  s.cfg.data_units = false;
  EXPECT_EQ(extract_candidates(s.img, s.dis, s.cfg).size(), 1u);
}

TEST(Candidates, StrideFollowsAlignment) {
  Scene s;
  s.cfg.alignment = Alignment::none;
  std::size_t units = 0;
  for (const auto& c : extract_candidates(s.img, s.dis, s.cfg))
    if (c.origin == CandidateOrigin::data_unit) ++units;
  EXPECT_EQ(units, 32u - 8u + 1u);
}

TEST(Classify, Reasons) {
  Scene s;
  auto code_ptr = classify_candidate(cand(0x2000, 0x1000), s.img, s.dis, s.cfg);
  ASSERT_TRUE(std::holds_alternative<Xref>(code_ptr));
  EXPECT_EQ(std::get<Xref>(code_ptr).kind, XrefKind::d2c);

  auto op = classify_candidate(cand(0x1000, 0x2000, CandidateOrigin::operand), s.img,
                               s.dis, s.cfg);
  ASSERT_TRUE(std::holds_alternative<Xref>(op));
  EXPECT_EQ(std::get<Xref>(op).kind, XrefKind::c2d);

  EXPECT_EQ(reason(classify_candidate(cand(0x2010, 5), s.img, s.dis, s.cfg)),
            RejectReason::out_of_region);

  s.cfg.min_value = 0x100;
  EXPECT_EQ(reason(classify_candidate(cand(0x2010, 5), s.img, s.dis, s.cfg)),
            RejectReason::too_small);
  s.cfg.magic_values = {0xffff};
  EXPECT_EQ(reason(classify_candidate(cand(0x2018, 0xffff), s.img, s.dis, s.cfg)),
            RejectReason::magic_value);
}

TEST(Classify, RegionMargin) {
  Scene s;
  Candidate c = cand(0x2000, 0x2040);  // just past .data
  EXPECT_EQ(reason(classify_candidate(c, s.img, s.dis, s.cfg)), RejectReason::out_of_region);
  s.cfg.region_margin = 0x20;
  EXPECT_EQ(reason(classify_candidate(c, s.img, s.dis, s.cfg)), RejectReason::out_of_region);
  s.cfg.region_margin = 0x21;
  EXPECT_FALSE(reason(classify_candidate(c, s.img, s.dis, s.cfg)));
}

TEST(Classify, CodeEntryOnly) {
  Scene s;
  s.cfg.code_entry_only = true;
  SymbolContext ctx;
  ctx.entries = {0x1000};
  ctx.owned = {0x1000, 0x1005};
  EXPECT_FALSE(reason(classify_candidate(cand(0x2000, 0x1000), s.img, s.dis, s.cfg, ctx)));
  EXPECT_EQ(reason(classify_candidate(cand(0x2000, 0x1005), s.img, s.dis, s.cfg, ctx)),
            RejectReason::not_entry);
  s.cfg.code_entry_only = false;
  EXPECT_FALSE(reason(classify_candidate(cand(0x2000, 0x1005), s.img, s.dis, s.cfg, ctx)));
}

TEST(Strings, Extent) {
  auto ext = [](std::initializer_list<int> v) {
    std::vector<std::uint8_t> b(v.begin(), v.end());
    return string_extent(b);
  };
  EXPECT_EQ(ext({'a', 'b', 'c', 0, 9}), 4u);
  EXPECT_EQ(ext({'a', 0}), 0u);
  EXPECT_EQ(ext({'a', 'b', 'c'}), 0u);
  EXPECT_EQ(ext({'h', 0, 'i', 0, 0, 0, 7}), 6u);
  EXPECT_EQ(ext({1, 2, 3}), 0u);
}

TEST(Symbolize, OperandCollisionIsReported) {
  // mov $blob,%esi where blob is data inside .text: the sweep decodes blob,
  // so the operand becomes a code reference that truth does not have.
  const Addr site = 0x401006, blob = 0x401020;
  Record t = truth("listing3_xref_fp");
  for (const auto& x : t.xrefs) EXPECT_NE(x.to, blob);
  Record r = run_record("listing3_xref_fp", "uroboros");
  EXPECT_TRUE(r.xrefs.count(Xref{site, blob, XrefKind::c2c}));
}

TEST(Symbolize, SortedUnique) {
  for (const char* prof : {"uroboros", "ghidra", "angr"}) {
    for (const auto& name : all_fixtures()) {
      AnalysisResult r = run(name, prof);
      ASSERT_TRUE(r.symbols);
      const auto& xs = r.symbols->xrefs;
      for (std::size_t i = 1; i < xs.size(); ++i)
        EXPECT_TRUE(xs[i - 1] < xs[i]) << prof << " " << name;
    }
  }
}

TEST(Tables, LonePointerNeedsMinimumSize) {
  AnalysisResult ghidra = run("lone_pointer", "ghidra");
  bool rejected = false;
  for (const auto& rj : ghidra.symbols->rejections)
    rejected |= rj.reason == RejectReason::table_size;
  EXPECT_TRUE(rejected);
  AnalysisResult relaxed = run("lone_pointer", "ghidra", {"symbolize.min_table_size=1"});
  for (const auto& rj : relaxed.symbols->rejections)
    EXPECT_NE(rj.reason, RejectReason::table_size);
}
