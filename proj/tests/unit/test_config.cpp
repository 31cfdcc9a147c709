#include <gtest/gtest.h>

#include "dislab/config.hpp"

using namespace dislab;

TEST(Profiles, AllNamesLoad) {
  for (const auto& n : profile_names()) {
    StrategyConfig c = profile(n);
    EXPECT_EQ(c.profile, n);
  }
  EXPECT_THROW(profile("ida"), UnknownProfile);
}

TEST(Profiles, Baseline) {
  StrategyConfig c = profile("pure");
  EXPECT_EQ(c.algorithm, Algorithm::recursive);
  EXPECT_FALSE(c.prologue_match);
  EXPECT_FALSE(c.gap_scan);
  EXPECT_FALSE(c.symbolize);
  EXPECT_EQ(c.jt_strategy, JtStrategy::none);
  EXPECT_EQ(c.tailcall_rules, TailRules::none);
  EXPECT_EQ(c.main_method, MainMethod::arg_propagation);
  EXPECT_EQ(c.nonret_mode, NonRetMode::no_ret_scan);
  EXPECT_EQ(c.nonret_seeds, default_nonret_seeds());
}

TEST(Profiles, DistinguishingFlags) {
  EXPECT_EQ(profile("objdump").algorithm, Algorithm::linear);
  EXPECT_EQ(profile("psi").sweep_policy, SweepPolicy::psi_repair);
  EXPECT_EQ(profile("uroboros").sweep_policy, SweepPolicy::exclude_region);
  EXPECT_EQ(profile("ghidra").jt_bound_threshold, 1024u);
  EXPECT_EQ(profile("radare2").jt_bound_threshold, 512u);
  EXPECT_EQ(profile("ghidra").alignment, Alignment::four_unless_targeted);
  EXPECT_EQ(profile("angr").alignment, Alignment::none);
  EXPECT_TRUE(profile("ghidra").eh_frame);
  EXPECT_FALSE(profile("ghidra-ne").eh_frame);
  EXPECT_TRUE(profile("angr").gap_scan);
  EXPECT_FALSE(profile("angr-ns").gap_scan);
  EXPECT_EQ(profile("dyninst").nonret_propagation, Propagation::depth_first);
  EXPECT_EQ(profile("bap").nonret_mode, NonRetMode::all_paths);
}

TEST(Overrides, Assignments) {
  StrategyConfig c = profile("pure");
  apply_assignment(c, "cfg.jt_strategy=path_ghidra");
  apply_assignment(c, " cfg.jt_bound_threshold =  0x200 ");
  apply_assignment(c, "symbolize.enabled=on");
  apply_assignment(c, "symbolize.magic_values=0xffff, 0xff00");
  apply_assignment(c, "cfg.nonret_seeds=abort,_exit");
  EXPECT_EQ(c.jt_strategy, JtStrategy::path_ghidra);
  EXPECT_EQ(c.jt_bound_threshold, 512u);
  EXPECT_TRUE(c.symbolize);
  EXPECT_EQ(c.magic_values, (std::vector<std::uint64_t>{0xffff, 0xff00}));
  EXPECT_EQ(c.nonret_seeds, (std::vector<std::string>{"abort", "_exit"}));
  apply_assignment(c, "symbolize.magic_values=none");
  EXPECT_TRUE(c.magic_values.empty());
}

TEST(Overrides, Rejections) {
  StrategyConfig c = profile("pure");
  EXPECT_THROW(apply_assignment(c, "cfg.jt_strategy"), ConfigError);
  EXPECT_THROW(apply_assignment(c, "cfg.nope=1"), ConfigError);
  EXPECT_THROW(apply_assignment(c, "cfg.jt_strategy=ida"), ConfigError);
  EXPECT_THROW(apply_assignment(c, "cfg.jt_bound_threshold=12x"), ConfigError);
  EXPECT_THROW(apply_assignment(c, "symbolize.enabled=maybe"), ConfigError);
}

TEST(Overrides, ConfigText) {
  StrategyConfig c = profile("pure");
  apply_config_text(c,
                    "# comment\n"
                    "recursive.prologue_match = true\n"
                    "\n"
                    "recursive.prologue_set = aggressive  # trailing\n");
  EXPECT_TRUE(c.prologue_match);
  EXPECT_EQ(c.prologue_set, PrologueSet::aggressive);
}

TEST(Catalog, EntriesRoundTrip) {
  for (const auto& n : profile_names()) {
    StrategyConfig c = profile(n);
    auto entries = config_entries(c);
    ASSERT_EQ(entries.size(), flag_catalog().size());
    StrategyConfig d = profile("pure");
    for (const auto& [k, v] : entries) apply_override(d, k, v);
    EXPECT_EQ(config_entries(d), entries) << n;
  }
}

TEST(Catalog, EveryFlagDescribed) {
  for (const auto& f : flag_catalog()) {
    EXPECT_FALSE(f.key.empty());
    EXPECT_FALSE(f.values.empty()) << f.key;
    EXPECT_FALSE(f.technique.empty()) << f.key;
    EXPECT_NE(f.key.find('.'), std::string::npos) << f.key;
  }
}

TEST(Seeds, Defaults) {
  auto s = default_nonret_seeds();
  EXPECT_NE(std::find(s.begin(), s.end(), "exit"), s.end());
  EXPECT_NE(std::find(s.begin(), s.end(), "abort"), s.end());
  StrategyConfig c = profile("pure");
  c.nonret_seed_file = "/nonexistent/seeds.txt";
  EXPECT_THROW(resolved_nonret_seeds(c), ConfigError);
}
