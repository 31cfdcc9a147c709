#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dislab {

enum class Algorithm { linear, recursive };
enum class SweepPolicy { skip_byte, psi_repair, exclude_region };
enum class PrologueSet { strict, aggressive };
enum class MainMethod { none, arg_propagation, byte_pattern };
enum class Alignment { machine, four_unless_targeted, none };
enum class StringOverlap { off, prefer_string, prefer_pointer };
enum class JtStrategy { none, pattern_radare2, slice_dyninst, path_ghidra };
enum class CallScope { none, block, function };
enum class TailRules { none, radare2, ghidra, dyninst, angr };
enum class NonRetMode { none, no_ret_scan, all_paths, fallthrough_evidence };
enum class Propagation { assume_fallthrough, worklist_propagate, depth_first };

struct StrategyConfig {
  std::string profile = "pure";

  Algorithm algorithm = Algorithm::recursive;
  SweepPolicy sweep_policy = SweepPolicy::skip_byte;

  bool seed_symbols = true;
  bool seed_main = true;
  bool prologue_match = false;
  PrologueSet prologue_set = PrologueSet::strict;
  bool gap_scan = false;
  bool xref_seed = false;

  MainMethod main_method = MainMethod::arg_propagation;
  bool eh_frame = false;
  bool call_targets = true;
  bool scan_begin = false;

  bool symbolize = false;
  bool data_units = true;
  bool scan_code_gaps = false;
  Alignment alignment = Alignment::machine;
  bool code_entry_only = false;
  std::uint64_t min_value = 0;
  std::vector<std::uint64_t> magic_values;
  std::uint64_t region_margin = 0;
  std::uint64_t min_table_size = 1;
  std::uint64_t table_split_distance = 0;  // 0 = never split
  StringOverlap string_overlap = StringOverlap::off;
  bool float_exclusion = false;
  bool type_sliding = false;

  JtStrategy jt_strategy = JtStrategy::none;
  std::uint64_t jt_bound_threshold = 0;  // 0 = unlimited
  std::uint64_t slice_assign_limit = 50;
  std::uint64_t slice_block_levels = 0;  // 0 = unlimited
  CallScope icall_scope = CallScope::none;
  TailRules tailcall_rules = TailRules::none;
  std::uint64_t tailcall_distance = 0x10000;
  NonRetMode nonret_mode = NonRetMode::no_ret_scan;
  Propagation nonret_propagation = Propagation::worklist_propagate;
  std::vector<std::string> nonret_seeds;
  std::string nonret_seed_file;
  std::uint64_t nonret_unsafe_fallthroughs = 3;
  std::uint64_t nonret_passes = 2;
  std::uint64_t max_rounds = 8;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownProfile : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

const std::vector<std::string>& profile_names();
StrategyConfig profile(std::string_view name);

std::vector<std::string> default_nonret_seeds();
std::vector<std::uint64_t> ghidra_magic_values();

// `key = value` assignment; throws ConfigError on unknown keys or values.
void apply_override(StrategyConfig& cfg, std::string_view key,
                    std::string_view value);
// Parses `key=value` (whitespace around '=' allowed).
void apply_assignment(StrategyConfig& cfg, std::string_view assignment);
void apply_config_text(StrategyConfig& cfg, std::string_view text);

// Fully expanded flag set, one `key = value` per entry, in catalog order.
std::vector<std::pair<std::string, std::string>> config_entries(
    const StrategyConfig& cfg);

struct FlagInfo {
  std::string key;
  std::string values;     // accepted values
  std::string technique;  // catalog row this flag implements
  std::string tools;      // tools that use it
};
const std::vector<FlagInfo>& flag_catalog();

// Seeds from cfg.nonret_seeds plus the optional seed file.
std::vector<std::string> resolved_nonret_seeds(const StrategyConfig& cfg);

}  // namespace dislab
