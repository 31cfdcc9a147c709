#include <gtest/gtest.h>

#include "dislab/funcid.hpp"
#include "fixture.hpp"

using namespace dislab;
using namespace dislab::testing;

namespace {

BinaryImage code(Mode m, const std::string& hex) {
  return parse_fixture(std::string("mode ") + (m == Mode::x64 ? "x64" : "x86") +
                       "\nsection .text 1000 code " + hex + "\nentry 1000\n");
}

bool prologue(Mode m, const std::string& hex, PrologueSet set) {
  BinaryImage img = code(m, hex);
  return prologue_at(img, 0x1000, set, 0x1000 + hex.size() / 2);
}

}  // namespace

TEST(Prologue, Patterns) {
  using enum PrologueSet;
  EXPECT_TRUE(prologue(Mode::x86, "5589e5", strict));
  EXPECT_TRUE(prologue(Mode::x64, "554889e5", strict));
  EXPECT_TRUE(prologue(Mode::x64, "f30f1efa554889e5", strict));
  EXPECT_TRUE(prologue(Mode::x64, "534883ec10", strict));
  EXPECT_TRUE(prologue(Mode::x64, "41544883ec08", strict));
  EXPECT_FALSE(prologue(Mode::x86, "5089e5", strict));
  EXPECT_TRUE(prologue(Mode::x86, "5089e5", aggressive));
  EXPECT_FALSE(prologue(Mode::x64, "90c3", aggressive));
  EXPECT_FALSE(prologue(Mode::x64, "55c3", aggressive));
  // The second instruction may not cross the limit.
  EXPECT_FALSE(prologue(Mode::x86, "5589", strict));
}

TEST(Prologue, MatchesOnlyInsideGaps) {
  BinaryImage img = code(Mode::x86, "5589e5c35589e5c3");
  auto all = match_prologues(img, {{0x1000, 8}}, PrologueSet::strict);
  EXPECT_EQ(all, (std::vector<Addr>{0x1000, 0x1004}));
  auto second = match_prologues(img, {{0x1004, 4}}, PrologueSet::strict);
  EXPECT_EQ(second, std::vector<Addr>{0x1004});
}

TEST(Main, BothMethodsFindTheArgument) {
  BinaryImage img = fixture("listing1_main");
  const Addr expect = 0x40e0e2;
  AnalysisResult base = run("listing1_main", "pure", {"funcid.main_method=none"});
  EXPECT_FALSE(base.main);
  auto call = startup_call(img, &base.disasm);
  ASSERT_TRUE(call);
  EXPECT_EQ(call->flow, FlowKind::call_indirect);
  EXPECT_EQ(find_main(img, &base.disasm, MainMethod::arg_propagation),
            std::optional<Addr>(expect));
  EXPECT_EQ(find_main(img, &base.disasm, MainMethod::byte_pattern),
            std::optional<Addr>(expect));
  EXPECT_FALSE(find_main(img, &base.disasm, MainMethod::none));
  EXPECT_EQ(truth("listing1_main").main, std::optional<Addr>(expect));
}

TEST(Main, AbsentWithoutStartupCall) {
  BinaryImage img = fixture("clean_code");
  AnalysisResult r = run("clean_code", "pure");
  EXPECT_FALSE(find_main(img, &r.disasm, MainMethod::arg_propagation));
  EXPECT_FALSE(find_main(img, &r.disasm, MainMethod::byte_pattern));
}

TEST(EhFrame, ListsEveryFde) {
  BinaryImage img = fixture("eh_frame_gap");
  std::vector<Addr> expect;
  for (const auto& [a, src] : truth("eh_frame_gap").functions) expect.push_back(a);
  EXPECT_EQ(eh_frame_entries(img), expect);
  EXPECT_TRUE(eh_frame_entries(fixture("clean_code")).empty());
}

TEST(EhFrame, TruncatedRecordThrows) {
  BinaryImage img = fixture("eh_frame_gap");
  const Section* s = nullptr;
  for (const auto& sec : img.sections)
    if (sec.name == ".eh_frame") s = &sec;
  ASSERT_NE(s, nullptr);
  std::vector<std::uint8_t> cut(s->bytes.begin(), s->bytes.begin() + 30);
  EXPECT_THROW(parse_eh_frame(cut, s->vaddr, img.mode), EhFrameError);
}

TEST(Entries, StrongestSourceWins) {
  AnalysisResult r = run("eh_frame_gap", "pure", {"funcid.eh_frame=true"});
  std::map<Addr, EntrySource> got;
  for (const auto& f : r.functions) got[f.vaddr] = f.source;
  EXPECT_EQ(got.at(0x401000), EntrySource::symbol);
  // Also a call target, but the unwind record ranks higher.
  EXPECT_EQ(got.at(0x401006), EntrySource::eh_frame);
  EXPECT_EQ(got.at(0x401009), EntrySource::eh_frame);

  AnalysisResult plain = run("eh_frame_gap", "pure");
  got.clear();
  for (const auto& f : plain.functions) got[f.vaddr] = f.source;
  EXPECT_EQ(got.at(0x401006), EntrySource::call_target);
  EXPECT_FALSE(got.count(0x401009));
}

TEST(Entries, OnlyDisassembledAddresses) {
  BinaryImage img = fixture("listing11_prologue");
  AnalysisResult r = run("listing11_prologue", "pure");
  EntryEvidence ev;
  ev.tail_call_targets = {0x8048419};
  ev.eh_frame = {0x804840f};
  StrategyConfig cfg = profile("pure");
  cfg.eh_frame = true;
  auto entries = collect_entries(img, r.disasm, ev, cfg);
  for (const auto& e : entries) EXPECT_TRUE(r.disasm.instructions.count(e.vaddr));
}

TEST(Entries, SourceNamesRoundTrip) {
  for (EntrySource s : {EntrySource::symbol, EntrySource::eh_frame, EntrySource::main_arg,
                        EntrySource::main_pattern, EntrySource::call_target,
                        EntrySource::tail_call_target, EntrySource::prologue,
                        EntrySource::scan_begin})
    EXPECT_EQ(entry_source_from(to_string(s)), std::optional<EntrySource>(s));
  EXPECT_FALSE(entry_source_from("nope"));
}
