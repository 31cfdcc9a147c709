#pragma once

#include <array>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dislab/decode.hpp"
#include "dislab/image.hpp"

namespace dislab {

struct DisasmResult;
struct CfgHooks;

// Interval of a register family. `guarded` is set only when the limits
// come from a constant, a comparison guard or a mask; width narrowing
// alone leaves it clear.
struct Value {
  static constexpr std::int64_t kMin = std::numeric_limits<std::int64_t>::min();
  static constexpr std::int64_t kMax = std::numeric_limits<std::int64_t>::max();

  std::int64_t lo = kMin;
  std::int64_t hi = kMax;
  bool guarded = false;

  static Value top() { return {}; }
  static Value constant(std::int64_t c) { return {c, c, true}; }
  bool is_top() const { return lo == kMin && hi == kMax; }
  bool finite() const { return lo != kMin && hi != kMax; }
  std::optional<std::int64_t> as_const() const {
    if (guarded && lo == hi) return lo;
    return std::nullopt;
  }
  bool operator==(const Value&) const = default;
};

Value join(const Value& a, const Value& b);

// Last comparison of a register against an immediate.
struct Flags {
  Reg reg = Reg::none;
  std::int64_t imm = 0;
  bool operator==(const Flags&) const = default;
};

struct RegState {
  std::array<Value, kRegCount> regs{};
  std::optional<Flags> flags;
  bool operator==(const RegState&) const = default;

  Value& operator[](Reg r) { return regs[std::size_t(r)]; }
  const Value& operator[](Reg r) const { return regs[std::size_t(r)]; }
};

// Refines st for the edge of a conditional jump; taken selects the arm.
void apply_guard(RegState& st, Cond cond, bool taken);

struct AnalysisOptions {
  bool model_sub = true;      // false: sub produces top
  int widen_after = 2;        // visits before widening
  bool read_constant_memory = true;
  std::optional<Reg> entry_zero;  // register set to 0 at roots (stack delta)
};

// Forward interval analysis over a set of basic blocks. Roots (blocks with
// no predecessor inside the set) start from top.
class IntervalAnalysis {
 public:
  IntervalAnalysis(const BinaryImage& image, const DisasmResult& result,
                   const CfgHooks& hooks, std::set<Addr> blocks,
                   AnalysisOptions options = {});

  // State immediately before the instruction at a; nullopt when a is not
  // in an analyzed block or not reached.
  std::optional<RegState> before(Addr a) const;

  // Value named by a memory operand's address when it is constant.
  std::optional<Addr> address_of(const MemExpr& m, const RegState& st,
                                 const Instruction& ins) const;

  void step(RegState& st, const Instruction& ins) const;

 private:
  const BinaryImage& image_;
  const DisasmResult& result_;
  const CfgHooks& hooks_;
  std::set<Addr> blocks_;
  AnalysisOptions opt_;
  std::map<Addr, RegState> in_;
};

// Successor block starts of a block for analysis purposes: intra-procedural
// successors plus the fallthrough of a call.
std::vector<Addr> analysis_successors(const DisasmResult& result,
                                      const CfgHooks& hooks, Addr block);
std::map<Addr, std::vector<Addr>> analysis_predecessors(const DisasmResult& result,
                                                        const CfgHooks& hooks);

// True if the function at t is a `mov (%sp),reg; ret` helper; returns reg.
std::optional<Reg> pc_thunk_register(const DisasmResult& result, Addr t);

}  // namespace dislab
