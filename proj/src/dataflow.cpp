#include "dislab/dataflow.hpp"

#include <algorithm>

#include "dislab/recursive.hpp"

namespace dislab {

namespace {

bool is_gpr(Reg r) { return r >= Reg::ax && r <= Reg::r15; }

std::optional<std::int64_t> checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t out;
  if (__builtin_add_overflow(a, b, &out)) return std::nullopt;
  return out;
}

Value shift(const Value& v, std::int64_t d) {
  if (!v.finite()) return Value::top();
  auto lo = checked_add(v.lo, d), hi = checked_add(v.hi, d);
  if (!lo || !hi) return Value::top();
  return {*lo, *hi, v.guarded};
}

Value sum(const Value& a, const Value& b) {
  if (!a.finite() || !b.finite()) return Value::top();
  auto lo = checked_add(a.lo, b.lo), hi = checked_add(a.hi, b.hi);
  if (!lo || !hi) return Value::top();
  return {*lo, *hi, a.guarded && b.guarded};
}

Value scale(const Value& v, std::int64_t k) {
  if (!v.finite() || k <= 0) return Value::top();
  std::int64_t lo, hi;
  if (__builtin_mul_overflow(v.lo, k, &lo) || __builtin_mul_overflow(v.hi, k, &hi))
    return Value::top();
  return {lo, hi, v.guarded};
}

std::int64_t imm_for(const Operand& o, std::uint8_t dst_size) {
  std::int64_t v = o.imm;
  if (dst_size == 4) v = std::int64_t(std::uint32_t(v));
  return v;
}

// x <=u k
Value cap_unsigned(const Value& v, std::int64_t k) {
  if (k < 0) return v;
  if (v.lo >= 0 && v.lo != Value::kMin) return {v.lo, std::min(v.hi, k), true};
  return {0, k, true};
}

Value floor_unsigned(const Value& v, std::int64_t k) {
  if (v.lo >= 0 && v.lo != Value::kMin) {
    Value out{std::max(v.lo, k), v.hi, false};
    out.guarded = out.finite();
    return out;
  }
  return v;
}

Value cap_signed(const Value& v, std::int64_t k) {
  Value out{v.lo, std::min(v.hi, k), false};
  out.guarded = out.finite();
  return out;
}

Value floor_signed(const Value& v, std::int64_t k) {
  Value out{std::max(v.lo, k), v.hi, false};
  out.guarded = out.finite();
  return out;
}

RegState join_state(const RegState& a, const RegState& b) {
  RegState out;
  for (std::size_t i = 0; i < kRegCount; ++i) out.regs[i] = join(a.regs[i], b.regs[i]);
  if (a.flags == b.flags) out.flags = a.flags;
  return out;
}

}  // namespace

Value join(const Value& a, const Value& b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi), a.guarded && b.guarded};
}

void apply_guard(RegState& st, Cond cond, bool taken) {
  if (!st.flags) return;
  Reg r = st.flags->reg;
  std::int64_t k = st.flags->imm;
  Value& v = st[r];
  auto minus1 = [](std::int64_t x) { return x == Value::kMin ? x : x - 1; };
  auto plus1 = [](std::int64_t x) { return x == Value::kMax ? x : x + 1; };
  switch (cond) {
    case Cond::a: v = taken ? floor_unsigned(v, plus1(k)) : cap_unsigned(v, k); break;
    case Cond::ae: v = taken ? floor_unsigned(v, k) : cap_unsigned(v, minus1(k)); break;
    case Cond::b: v = taken ? cap_unsigned(v, minus1(k)) : floor_unsigned(v, k); break;
    case Cond::be: v = taken ? cap_unsigned(v, k) : floor_unsigned(v, plus1(k)); break;
    case Cond::l: v = taken ? cap_signed(v, minus1(k)) : floor_signed(v, k); break;
    case Cond::le: v = taken ? cap_signed(v, k) : floor_signed(v, plus1(k)); break;
    case Cond::g: v = taken ? floor_signed(v, plus1(k)) : cap_signed(v, k); break;
    case Cond::ge: v = taken ? floor_signed(v, k) : cap_signed(v, minus1(k)); break;
    case Cond::e: if (taken) v = Value::constant(k); break;
    case Cond::ne: if (!taken) v = Value::constant(k); break;
    default: break;
  }
}

std::optional<Reg> pc_thunk_register(const DisasmResult& result, Addr t) {
  const Instruction* i1 = result.at(t);
  if (!i1 || i1->op != Op::mov || i1->operands.size() != 2) return std::nullopt;
  const Operand& d = i1->operands[0];
  const Operand& s = i1->operands[1];
  if (d.kind != OperandKind::reg || !is_gpr(d.reg) || s.kind != OperandKind::mem ||
      s.mem.base != Reg::sp || s.mem.index != Reg::none || s.mem.displacement)
    return std::nullopt;
  const Instruction* i2 = result.at(i1->end());
  if (!i2 || i2->op != Op::ret) return std::nullopt;
  return d.reg;
}

std::vector<Addr> analysis_successors(const DisasmResult& result,
                                      const CfgHooks& hooks, Addr block) {
  const BasicBlock* bb = result.block_at(block);
  if (!bb) return {};
  std::vector<Addr> out = bb->successors;
  auto it = result.instructions.lower_bound(bb->end);
  if (it == result.instructions.begin()) return out;
  const Instruction& last = std::prev(it)->second;
  bool falls = false;
  if (last.flow == FlowKind::call_direct) {
    falls = !hooks.nonreturning.count(*last.branch_target);
  } else if (last.flow == FlowKind::call_indirect) {
    falls = true;
    if (auto c = hooks.call_targets.find(last.vaddr); c != hooks.call_targets.end() &&
        !c->second.empty())
      falls = !std::all_of(c->second.begin(), c->second.end(),
                           [&](Addr t) { return hooks.nonreturning.count(t) > 0; });
  }
  if (falls && result.block_at(last.end())) out.push_back(last.end());
  return out;
}

std::map<Addr, std::vector<Addr>> analysis_predecessors(const DisasmResult& result,
                                                        const CfgHooks& hooks) {
  std::map<Addr, std::vector<Addr>> preds;
  for (const auto& b : result.blocks)
    for (Addr s : analysis_successors(result, hooks, b.start)) preds[s].push_back(b.start);
  return preds;
}

IntervalAnalysis::IntervalAnalysis(const BinaryImage& image, const DisasmResult& result,
                                   const CfgHooks& hooks, std::set<Addr> blocks,
                                   AnalysisOptions options)
    : image_(image), result_(result), hooks_(hooks), blocks_(std::move(blocks)),
      opt_(std::move(options)) {
  std::map<Addr, std::vector<Addr>> preds;
  for (Addr b : blocks_)
    for (Addr s : analysis_successors(result_, hooks_, b))
      if (blocks_.count(s)) preds[s].push_back(b);

  RegState init;
  if (opt_.entry_zero) init[*opt_.entry_zero] = Value::constant(0);

  // Blocks with an outside predecessor (or none) are entered from top.
  auto all_preds = analysis_predecessors(result_, hooks_);
  std::set<Addr> work;
  for (Addr b : blocks_) {
    bool outside = false;
    auto ap = all_preds.find(b);
    if (ap == all_preds.end() || ap->second.empty()) outside = true;
    else
      for (Addr p : ap->second)
        if (!blocks_.count(p)) outside = true;
    if (outside) {
      in_[b] = init;
      work.insert(b);
    }
  }
  if (work.empty() && !blocks_.empty()) {
    in_[*blocks_.begin()] = init;
    work.insert(*blocks_.begin());
  }

  std::map<Addr, int> visits;
  while (!work.empty()) {
    Addr b = *work.begin();
    work.erase(work.begin());
    const BasicBlock* bb = result_.block_at(b);
    if (!bb) continue;
    RegState st = in_[b];
    const Instruction* last = nullptr;
    for (auto it = result_.instructions.lower_bound(bb->start);
         it != result_.instructions.end() && it->first < bb->end; ++it) {
      step(st, it->second);
      last = &it->second;
    }
    for (Addr s : analysis_successors(result_, hooks_, b)) {
      if (!blocks_.count(s)) continue;
      RegState out = st;
      if (last && last->flow == FlowKind::cond_jump && *last->branch_target != last->end())
        apply_guard(out, last->cond, s == *last->branch_target);
      auto cur = in_.find(s);
      if (cur == in_.end()) {
        in_[s] = out;
        work.insert(s);
        continue;
      }
      RegState merged = join_state(cur->second, out);
      if (merged == cur->second) continue;
      if (++visits[s] > opt_.widen_after)
        for (std::size_t i = 0; i < kRegCount; ++i)
          if (merged.regs[i] != cur->second.regs[i]) merged.regs[i] = Value::top();
      cur->second = merged;
      work.insert(s);
    }
  }
}

std::optional<RegState> IntervalAnalysis::before(Addr a) const {
  const BasicBlock* bb = result_.block_containing(a);
  if (!bb) return std::nullopt;
  auto in = in_.find(bb->start);
  if (in == in_.end()) return std::nullopt;
  RegState st = in->second;
  for (auto it = result_.instructions.lower_bound(bb->start);
       it != result_.instructions.end() && it->first < a; ++it)
    step(st, it->second);
  return st;
}

std::optional<Addr> IntervalAnalysis::address_of(const MemExpr& m, const RegState& st,
                                                 const Instruction& ins) const {
  if (m.segment) return std::nullopt;
  if (m.base == Reg::ip) return ins.memory_address();
  std::int64_t a = m.displacement;
  if (m.base != Reg::none) {
    auto c = st[m.base].as_const();
    if (!c) return std::nullopt;
    a += *c;
  }
  if (m.index != Reg::none) {
    auto c = st[m.index].as_const();
    if (!c) return std::nullopt;
    a += *c * m.scale;
  }
  Addr out = Addr(a);
  if (image_.mode == Mode::x86) out &= 0xffffffff;
  return out;
}

void IntervalAnalysis::step(RegState& st, const Instruction& ins) const {
  std::set<Reg> handled;
  auto set = [&](Reg r, Value v) {
    if (!is_gpr(r)) return;
    st[r] = v;
    handled.insert(r);
  };
  unsigned word = machine_size(image_.mode);
  const Operand* dst = ins.operands.size() >= 1 ? &ins.operands[0] : nullptr;
  const Operand* src = ins.operands.size() >= 2 ? &ins.operands[1] : nullptr;
  bool dst_reg = dst && dst->kind == OperandKind::reg && is_gpr(dst->reg);

  auto load = [&](const Operand& m, unsigned size, bool sign) -> Value {
    if (!opt_.read_constant_memory) return Value::top();
    auto a = address_of(m.mem, st, ins);
    if (!a || !image_.is_data(*a)) return Value::top();
    auto v = image_.read_uint(*a, size ? size : word);
    if (!v) return Value::top();
    std::int64_t x = std::int64_t(*v);
    if (sign && size < 8) {
      unsigned bits = 8 * size;
      x = std::int64_t(*v << (64 - bits)) >> (64 - bits);
    }
    return Value::constant(x);
  };

  std::optional<Flags> flags = st.flags;
  switch (ins.op) {
    case Op::mov:
      if (dst_reg && src) {
        if (src->kind == OperandKind::imm)
          set(dst->reg, Value::constant(imm_for(*src, dst->size)));
        else if (src->kind == OperandKind::reg && is_gpr(src->reg))
          set(dst->reg, st[src->reg]);
        else if (src->kind == OperandKind::mem)
          set(dst->reg, load(*src, dst->size, false));
      }
      break;
    case Op::movzx:
      if (dst_reg && src) {
        std::int64_t lim = src->size >= 8 ? Value::kMax
                                          : (std::int64_t(1) << (8 * src->size)) - 1;
        if (src->kind == OperandKind::reg && is_gpr(src->reg)) {
          const Value& v = st[src->reg];
          if (v.guarded && v.lo >= 0 && v.hi <= lim)
            set(dst->reg, v);
          else
            set(dst->reg, {0, lim, false});
        } else if (src->kind == OperandKind::mem) {
          Value v = load(*src, src->size, false);
          set(dst->reg, v.as_const() ? v : Value{0, lim, false});
        }
      }
      break;
    case Op::movsx:
      if (dst_reg && src) {
        if (src->kind == OperandKind::reg && is_gpr(src->reg))
          set(dst->reg, st[src->reg].guarded ? st[src->reg] : Value::top());
        else if (src->kind == OperandKind::mem)
          set(dst->reg, load(*src, src->size, true));
      }
      break;
    case Op::lea:
      if (dst_reg && src && src->kind == OperandKind::mem) {
        if (auto a = address_of(src->mem, st, ins)) {
          set(dst->reg, Value::constant(std::int64_t(*a)));
        } else {
          const MemExpr& m = src->mem;
          Value v = Value::constant(m.displacement);
          if (m.base != Reg::none) v = sum(v, st[m.base]);
          if (m.index != Reg::none) v = sum(v, scale(st[m.index], m.scale));
          set(dst->reg, v);
        }
      }
      break;
    case Op::add:
    case Op::sub:
      if (dst_reg && src) {
        bool neg = ins.op == Op::sub;
        if (neg && !opt_.model_sub && dst->reg != Reg::sp) {
          set(dst->reg, Value::top());
        } else if (src->kind == OperandKind::imm) {
          set(dst->reg, shift(st[dst->reg], neg ? -src->imm : src->imm));
        } else if (src->kind == OperandKind::reg && is_gpr(src->reg) && !neg) {
          set(dst->reg, sum(st[dst->reg], st[src->reg]));
        } else {
          set(dst->reg, Value::top());
        }
      }
      flags.reset();
      break;
    case Op::and_:
      if (dst_reg && src && src->kind == OperandKind::imm && src->imm >= 0) {
        const Value& v = st[dst->reg];
        if (v.guarded && v.lo >= 0)
          set(dst->reg, {v.lo > src->imm ? 0 : v.lo, std::min(v.hi, src->imm), true});
        else
          set(dst->reg, {0, src->imm, true});
      }
      flags.reset();
      break;
    case Op::xor_:
      if (dst_reg && src && src->kind == OperandKind::reg && src->reg == dst->reg)
        set(dst->reg, Value::constant(0));
      flags.reset();
      break;
    case Op::inc:
    case Op::dec:
      if (dst_reg) set(dst->reg, shift(st[dst->reg], ins.op == Op::inc ? 1 : -1));
      flags.reset();
      break;
    case Op::shl:
      if (dst_reg && src && src->kind == OperandKind::imm && src->imm >= 0 &&
          src->imm < 32)
        set(dst->reg, scale(st[dst->reg], std::int64_t(1) << src->imm));
      flags.reset();
      break;
    case Op::shr:
    case Op::sar:
      if (dst_reg && src && src->kind == OperandKind::imm) {
        const Value& v = st[dst->reg];
        if (v.finite() && v.lo >= 0 && src->imm >= 0 && src->imm < 63)
          set(dst->reg, {v.lo >> src->imm, v.hi >> src->imm, v.guarded});
      }
      flags.reset();
      break;
    case Op::cmp:
      flags.reset();
      if (dst_reg && src && src->kind == OperandKind::imm)
        flags = Flags{dst->reg, src->imm};
      break;
    case Op::test:
      flags.reset();
      if (dst_reg && src && src->kind == OperandKind::reg && src->reg == dst->reg)
        flags = Flags{dst->reg, 0};
      break;
    case Op::or_:
      flags.reset();
      break;
    case Op::push:
      set(Reg::sp, shift(st[Reg::sp], -std::int64_t(word)));
      break;
    case Op::pop:
      if (dst_reg) set(dst->reg, Value::top());
      set(Reg::sp, shift(st[Reg::sp], word));
      break;
    case Op::leave:
      set(Reg::sp, shift(st[Reg::bp], word));
      set(Reg::bp, Value::top());
      break;
    case Op::call: {
      static constexpr Reg kX64[] = {Reg::ax, Reg::cx, Reg::dx, Reg::si, Reg::di,
                                     Reg::r8, Reg::r9, Reg::r10, Reg::r11};
      static constexpr Reg kX86[] = {Reg::ax, Reg::cx, Reg::dx};
      if (image_.mode == Mode::x64)
        for (Reg r : kX64) set(r, Value::top());
      else
        for (Reg r : kX86) set(r, Value::top());
      if (ins.branch_target)
        if (auto r = pc_thunk_register(result_, *ins.branch_target))
          set(*r, Value::constant(std::int64_t(ins.end())));
      handled.insert(Reg::sp);
      flags.reset();
      break;
    }
    default:
      break;
  }
  for (std::size_t i = 0; i < kRegCount; ++i) {
    Reg r = Reg(i);
    if (!ins.writes(r) || handled.count(r) || !is_gpr(r)) continue;
    st[r] = Value::top();
  }
  if (flags && ins.writes(flags->reg) && ins.op != Op::cmp && ins.op != Op::test)
    flags.reset();
  st.flags = flags;
}

}  // namespace dislab
