#pragma once

#include <map>
#include <set>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/decode.hpp"
#include "dislab/image.hpp"

namespace dislab {

struct SweepResult;

enum class Provenance { seed_reachable, prologue_match, gap_scan, xref_seed, linear };

const char* to_string(Provenance p);

struct BasicBlock {
  Addr start = 0;
  Addr end = 0;  // exclusive
  std::vector<Addr> successors;
};

enum class FailureReason { bad_opcode, overlap, unmapped };

struct DescentFailure {
  Addr vaddr = 0;
  FailureReason reason = FailureReason::bad_opcode;
  Addr from = 0;  // instruction whose flow led here
};

// Facts from the CFG phase that steer descent.
struct CfgHooks {
  std::set<Addr> nonreturning;                     // function entries
  std::map<Addr, std::vector<Addr>> jump_targets;  // resolved indirect jumps
  std::map<Addr, std::vector<Addr>> call_targets;  // resolved indirect calls
  std::set<Addr> jumps_as_calls;  // indirect jumps treated as calls
  std::set<Addr> tail_calls;      // direct jump sites that leave the function

  bool operator==(const CfgHooks&) const = default;
};

struct DisasmResult {
  std::map<Addr, Instruction> instructions;
  std::map<Addr, Provenance> provenance;
  std::vector<BasicBlock> blocks;  // sorted by start
  std::vector<Addr> pending_indirect;
  std::vector<DescentFailure> failures;
  std::vector<Addr> roots;          // every address a descent started from
  std::vector<Addr> prologue_hits;  // roots added by prologue matching
  std::vector<Addr> scan_begins;    // roots added by gap scanning
  std::vector<Addr> xref_seeds;     // roots added by xref seeding

  const Instruction* at(Addr a) const;
  // Instruction whose bytes cover a, if any.
  const Instruction* covering(Addr a) const;
  const BasicBlock* block_at(Addr start) const;
  const BasicBlock* block_containing(Addr a) const;
};

DisasmResult recursive_descent(const BinaryImage& image,
                               const std::vector<Addr>& seeds,
                               const CfgHooks& hooks,
                               const StrategyConfig& config,
                               const Decoder& dec = default_decoder());

std::vector<Range> gap_regions(const DisasmResult& result,
                               const BinaryImage& image);

DisasmResult apply_gap_heuristics(DisasmResult result, const BinaryImage& image,
                                  const StrategyConfig& config,
                                  const CfgHooks& hooks = {},
                                  const Decoder& dec = default_decoder());

// Successors of one instruction under the hooks, excluding call targets.
std::vector<Addr> flow_successors(const Instruction& ins, const CfgHooks& hooks);

// Recomputes normalized blocks; leaders are roots, branch and table
// targets, and instructions following any flow change or a gap.
void rebuild_blocks(DisasmResult& result, const CfgHooks& hooks);

// Wraps a linear sweep result so later phases can consume it.
DisasmResult from_sweep(const SweepResult& sweep);

}  // namespace dislab
