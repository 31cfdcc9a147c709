#pragma once

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/funcid.hpp"
#include "dislab/recursive.hpp"

namespace dislab {

enum class EdgeKind { fallthrough, jump, taken, not_taken, table };
const char* to_string(EdgeKind k);

struct Edge {
  Addr from = 0;  // block start
  Addr to = 0;    // block start
  EdgeKind kind = EdgeKind::fallthrough;

  auto key() const { return std::tuple(from, to, kind); }
  bool operator<(const Edge& o) const { return key() < o.key(); }
  bool operator==(const Edge& o) const { return key() == o.key(); }
};

struct CallEdge {
  Addr caller = 0;
  Addr callee = 0;
  Addr site = 0;

  auto key() const { return std::tuple(caller, callee, site); }
  bool operator<(const CallEdge& o) const { return key() < o.key(); }
  bool operator==(const CallEdge& o) const { return key() == o.key(); }
};

struct CFG {
  std::vector<BasicBlock> blocks;
  std::vector<Edge> edges;           // sorted
  std::vector<CallEdge> call_graph;  // sorted
  std::vector<Addr> unresolved;      // indirect sites without targets
};

// Function bodies as sets of block starts. A body follows intra-procedural
// successors and call fallthroughs but never enters another entry.
struct FunctionMap {
  std::set<Addr> entries;
  std::map<Addr, std::set<Addr>> bodies;  // entry -> block starts
  std::map<Addr, std::set<Addr>> owners;  // block start -> entries

  std::vector<Addr> owners_of(const DisasmResult& result, Addr a) const;
};

FunctionMap function_bodies(const DisasmResult& result,
                            const std::set<Addr>& entries,
                            const CfgHooks& hooks);

CFG build_edges(const DisasmResult& result, const CfgHooks& hooks = {},
                const FunctionMap* functions = nullptr);

enum class TableEncoding { absolute, base_relative_signed };

struct JumpTable {
  Addr site = 0;
  Addr base = 0;
  std::uint8_t entry_width = 0;
  std::int64_t index_low = 0;
  std::int64_t index_high = 0;  // the index bound
  std::vector<Addr> targets;    // one per index in [low, high]
  TableEncoding encoding = TableEncoding::absolute;
};

enum class UnresolvedReason {
  no_pattern, no_bound, bound_exceeds_threshold, slice_depth_exhausted
};
const char* to_string(UnresolvedReason r);

struct Unresolved {
  Addr site = 0;
  UnresolvedReason reason = UnresolvedReason::no_pattern;
};

using TableResolution = std::variant<JumpTable, Unresolved>;

TableResolution resolve_jump_table(const BinaryImage& image,
                                   const DisasmResult& result, Addr site,
                                   JtStrategy strategy,
                                   const StrategyConfig& config,
                                   const CfgHooks& hooks = {},
                                   const FunctionMap* functions = nullptr);

std::vector<Addr> constant_prop_call_targets(const BinaryImage& image,
                                             const DisasmResult& result,
                                             Addr site, CallScope scope,
                                             const CfgHooks& hooks = {},
                                             const FunctionMap* functions = nullptr);

struct TailCall {
  Addr site = 0;
  Addr target = 0;
  std::string rule_fired;

  bool operator==(const TailCall&) const = default;
};

// entries carry their sources; targets found by an earlier tail-call pass
// do not count as known entries.
std::vector<TailCall> detect_tail_calls(const BinaryImage& image,
                                        const DisasmResult& result,
                                        const std::vector<FunctionEntry>& entries,
                                        TailRules rules,
                                        const StrategyConfig& config,
                                        const CfgHooks& hooks = {});

struct NonRetSet {
  std::set<Addr> members;
  std::set<std::string> seeds;
};

// Addresses of the seed routines present in the image.
std::set<Addr> seed_addresses(const BinaryImage& image,
                              const std::vector<std::string>& names);

NonRetSet detect_nonreturning(const BinaryImage& image,
                              const DisasmResult& result,
                              const std::vector<Addr>& entries,
                              const StrategyConfig& config,
                              const CfgHooks& hooks = {},
                              const std::set<Addr>& xref_targets = {});

// Whether f can reach a return given the members of nonret. With
// all_paths, any terminal other than a call to a member counts as
// returning.
bool may_return(const DisasmResult& result, Addr f,
                const std::set<Addr>& entries, const std::set<Addr>& nonret,
                const CfgHooks& hooks, bool all_paths);

CFG finalize_cfg(const DisasmResult& result,
                 const std::vector<JumpTable>& tables,
                 const std::vector<TailCall>& tail_calls,
                 const NonRetSet& nonret, const CfgHooks& hooks,
                 const FunctionMap* functions = nullptr);

}  // namespace dislab
