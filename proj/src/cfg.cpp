#include "dislab/cfg.hpp"

#include <algorithm>
#include <deque>

#include "dislab/dataflow.hpp"

namespace dislab {

const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::fallthrough: return "fallthrough";
    case EdgeKind::jump: return "jump";
    case EdgeKind::taken: return "taken";
    case EdgeKind::not_taken: return "not_taken";
    case EdgeKind::table: return "table";
  }
  return "?";
}

const char* to_string(UnresolvedReason r) {
  switch (r) {
    case UnresolvedReason::no_pattern: return "no_pattern";
    case UnresolvedReason::no_bound: return "no_bound";
    case UnresolvedReason::bound_exceeds_threshold: return "bound_exceeds_threshold";
    case UnresolvedReason::slice_depth_exhausted: return "slice_depth_exhausted";
  }
  return "?";
}

namespace {

const Instruction* last_of(const DisasmResult& r, const BasicBlock& b) {
  auto it = r.instructions.lower_bound(b.end);
  if (it == r.instructions.begin()) return nullptr;
  return &std::prev(it)->second;
}

}  // namespace

std::vector<Addr> FunctionMap::owners_of(const DisasmResult& result, Addr a) const {
  const BasicBlock* b = result.block_containing(a);
  if (!b) return {};
  auto it = owners.find(b->start);
  if (it == owners.end()) return {};
  return {it->second.begin(), it->second.end()};
}

FunctionMap function_bodies(const DisasmResult& result,
                            const std::set<Addr>& entries,
                            const CfgHooks& hooks) {
  FunctionMap fm;
  fm.entries = entries;
  std::map<Addr, std::vector<Addr>> succ;
  for (const auto& b : result.blocks)
    succ[b.start] = analysis_successors(result, hooks, b.start);
  for (Addr e : entries) {
    if (!result.block_at(e)) continue;
    auto& body = fm.bodies[e];
    std::vector<Addr> work{e};
    while (!work.empty()) {
      Addr b = work.back();
      work.pop_back();
      if (!body.insert(b).second) continue;
      for (Addr s : succ[b])
        if (s == e || !entries.count(s)) work.push_back(s);
    }
    for (Addr b : body) fm.owners[b].insert(e);
  }
  return fm;
}

CFG build_edges(const DisasmResult& result, const CfgHooks& hooks,
                const FunctionMap* functions) {
  CFG g;
  g.blocks = result.blocks;
  for (const auto& b : result.blocks) {
    const Instruction* last = last_of(result, b);
    if (!last) continue;
    for (Addr s : b.successors) {
      EdgeKind k = EdgeKind::fallthrough;
      switch (last->flow) {
        case FlowKind::cond_jump:
          k = s == *last->branch_target ? EdgeKind::taken : EdgeKind::not_taken;
          break;
        case FlowKind::jump_direct: k = EdgeKind::jump; break;
        case FlowKind::jump_indirect: k = EdgeKind::table; break;
        default: break;
      }
      g.edges.push_back({b.start, s, k});
    }
  }
  for (const auto& [a, ins] : result.instructions) {
    std::vector<Addr> callees;
    if (ins.flow == FlowKind::call_direct) {
      callees.push_back(*ins.branch_target);
    } else if (ins.flow == FlowKind::call_indirect ||
               (ins.flow == FlowKind::jump_indirect && hooks.jumps_as_calls.count(a))) {
      if (auto it = hooks.call_targets.find(a); it != hooks.call_targets.end())
        callees = it->second;
    } else {
      continue;
    }
    if (!functions) continue;
    for (Addr caller : functions->owners_of(result, a))
      for (Addr c : callees) g.call_graph.push_back({caller, c, a});
  }
  g.unresolved = result.pending_indirect;
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  std::sort(g.call_graph.begin(), g.call_graph.end());
  g.call_graph.erase(std::unique(g.call_graph.begin(), g.call_graph.end()),
                     g.call_graph.end());
  return g;
}

namespace {

struct TableShape {
  Addr load_at = 0;       // instruction that reads the table
  MemExpr mem;            // its memory operand
  std::uint8_t width = 0;
  TableEncoding encoding = TableEncoding::absolute;
  Addr add_at = 0;        // for relative tables: the add of the base
  Reg added = Reg::none;
};

// Site block followed by up to max_extra unique predecessors.
std::vector<Addr> pred_chain(const DisasmResult& r,
                             const std::map<Addr, std::vector<Addr>>& preds,
                             Addr site_block, std::size_t max_extra) {
  std::vector<Addr> chain{site_block};
  Addr cur = site_block;
  while (chain.size() <= max_extra) {
    auto it = preds.find(cur);
    if (it == preds.end() || it->second.size() != 1) break;
    Addr p = it->second.front();
    if (std::find(chain.begin(), chain.end(), p) != chain.end()) break;
    if (!r.block_at(p)) break;
    chain.push_back(p);
    cur = p;
  }
  return chain;
}

// Instructions of the chain before the site, nearest first.
std::vector<const Instruction*> backward_insns(const DisasmResult& r,
                                               const std::vector<Addr>& chain,
                                               Addr site) {
  std::vector<const Instruction*> out;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const BasicBlock* b = r.block_at(chain[i]);
    Addr stop = i == 0 ? site : b->end;
    std::vector<const Instruction*> blk;
    for (auto it = r.instructions.lower_bound(b->start);
         it != r.instructions.end() && it->first < stop; ++it)
      blk.push_back(&it->second);
    out.insert(out.end(), blk.rbegin(), blk.rend());
  }
  return out;
}

std::optional<TableShape> find_shape(const Instruction& site,
                                     const std::vector<const Instruction*>& back) {
  const Operand& op = site.operands.at(0);
  if (op.kind == OperandKind::mem) {
    if (op.mem.index == Reg::none || op.mem.segment) return std::nullopt;
    return TableShape{site.vaddr, op.mem, op.size, TableEncoding::absolute, 0,
                      Reg::none};
  }
  if (op.kind != OperandKind::reg) return std::nullopt;
  Reg target = op.reg;
  TableShape shape;
  for (const Instruction* ins : back) {
    if (!ins->writes(target)) continue;
    if (ins->operands.size() != 2 || ins->operands[0].kind != OperandKind::reg ||
        ins->operands[0].reg != target)
      return std::nullopt;
    const Operand& src = ins->operands[1];
    if (ins->op == Op::add && src.kind == OperandKind::reg && shape.added == Reg::none) {
      shape.added = src.reg;
      shape.add_at = ins->vaddr;
      continue;
    }
    if (ins->op == Op::mov && src.kind == OperandKind::reg) {
      target = src.reg;
      continue;
    }
    if ((ins->op == Op::mov || ins->op == Op::movsx) && src.kind == OperandKind::mem) {
      if (src.mem.index == Reg::none || src.mem.segment) return std::nullopt;
      shape.load_at = ins->vaddr;
      shape.mem = src.mem;
      shape.width = src.size;
      shape.encoding = shape.added != Reg::none ? TableEncoding::base_relative_signed
                                                : TableEncoding::absolute;
      return shape;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

// Backward reachable blocks within `levels` predecessor steps (0 = no
// limit), restricted to `allowed` when it is non-empty.
std::set<Addr> backward_blocks(const std::map<Addr, std::vector<Addr>>& preds,
                               Addr start, std::uint64_t levels,
                               const std::set<Addr>& allowed) {
  std::set<Addr> seen{start};
  std::deque<std::pair<Addr, std::uint64_t>> q{{start, 0}};
  while (!q.empty()) {
    auto [b, d] = q.front();
    q.pop_front();
    if (levels && d >= levels) continue;
    auto it = preds.find(b);
    if (it == preds.end()) continue;
    for (Addr p : it->second) {
      if (!allowed.empty() && !allowed.count(p)) continue;
      if (seen.insert(p).second) q.push_back({p, d + 1});
    }
  }
  return seen;
}

std::size_t assignments(const DisasmResult& r, const std::set<Addr>& blocks) {
  std::size_t n = 0;
  for (Addr s : blocks) {
    const BasicBlock* b = r.block_at(s);
    for (auto it = r.instructions.lower_bound(b->start);
         it != r.instructions.end() && it->first < b->end; ++it) {
      std::uint32_t gprs = it->second.regs_written & ~(1u << unsigned(Reg::sp)) &
                           ~(1u << unsigned(Reg::ip)) & ~(1u << unsigned(Reg::other)) &
                           ~1u;
      if (gprs) ++n;
    }
  }
  return n;
}

// Guard bound read by the pattern matcher: nearest unsigned conditional
// jump preceded by cmp or sub against an immediate.
std::optional<std::int64_t> pattern_bound(const std::vector<const Instruction*>& back) {
  for (std::size_t i = 0; i + 1 < back.size(); ++i) {
    const Instruction* j = back[i];
    if (j->flow != FlowKind::cond_jump) continue;
    if (j->cond != Cond::a && j->cond != Cond::ae && j->cond != Cond::b &&
        j->cond != Cond::be)
      continue;
    const Instruction* c = back[i + 1];
    if ((c->op != Op::cmp && c->op != Op::sub) || c->operands.size() != 2 ||
        c->operands[1].kind != OperandKind::imm)
      continue;
    std::int64_t k = c->operands[1].imm;
    if (j->cond == Cond::ae || j->cond == Cond::b) --k;
    return k;
  }
  return std::nullopt;
}

}  // namespace

TableResolution resolve_jump_table(const BinaryImage& image,
                                   const DisasmResult& result, Addr site,
                                   JtStrategy strategy,
                                   const StrategyConfig& config,
                                   const CfgHooks& hooks,
                                   const FunctionMap* functions) {
  auto fail = [&](UnresolvedReason r) { return Unresolved{site, r}; };
  const Instruction* ins = result.at(site);
  const BasicBlock* sb = result.block_containing(site);
  if (!ins || !sb || ins->flow != FlowKind::jump_indirect ||
      strategy == JtStrategy::none || ins->operands.empty())
    return fail(UnresolvedReason::no_pattern);

  auto preds = analysis_predecessors(result, hooks);
  std::size_t extra = strategy == JtStrategy::pattern_radare2 ? 3 : 64;
  auto chain = pred_chain(result, preds, sb->start, extra);
  auto back = backward_insns(result, chain, site);
  auto shape = find_shape(*ins, back);
  if (!shape) return fail(UnresolvedReason::no_pattern);
  Reg index = shape->mem.index;

  std::set<Addr> blocks;
  AnalysisOptions opt;
  bool truncated = false;
  if (strategy == JtStrategy::path_ghidra) {
    blocks.insert(chain.begin(), chain.end());
    opt.model_sub = false;
  } else if (strategy == JtStrategy::slice_dyninst) {
    std::set<Addr> allowed;
    if (functions)
      for (Addr e : functions->owners_of(result, site)) {
        const auto& body = functions->bodies.at(e);
        allowed.insert(body.begin(), body.end());
      }
    std::uint64_t levels = config.slice_block_levels;
    blocks = backward_blocks(preds, sb->start, levels, allowed);
    if (config.slice_assign_limit) {
      if (!levels) {
        std::uint64_t depth = 0;
        while (backward_blocks(preds, sb->start, depth + 1, allowed).size() >
               backward_blocks(preds, sb->start, depth, allowed).size())
          ++depth;
        levels = depth;
      }
      while (assignments(result, blocks) > config.slice_assign_limit && levels > 0) {
        --levels;
        truncated = true;
        blocks = backward_blocks(preds, sb->start, levels, allowed);
      }
    }
  } else {
    blocks.insert(chain.begin(), chain.end());
  }

  IntervalAnalysis ia(image, result, hooks, blocks, opt);
  auto st = ia.before(shape->load_at);
  if (!st) return fail(UnresolvedReason::no_pattern);

  MemExpr no_index = shape->mem;
  no_index.index = Reg::none;
  const Instruction* load = result.at(shape->load_at);
  auto table = ia.address_of(no_index, *st, *load);
  if (!table) return fail(UnresolvedReason::no_pattern);
  Addr rel_base = 0;
  if (shape->encoding == TableEncoding::base_relative_signed) {
    auto at_add = ia.before(shape->add_at);
    if (!at_add) return fail(UnresolvedReason::no_pattern);
    auto c = (*at_add)[shape->added].as_const();
    if (!c) return fail(UnresolvedReason::no_pattern);
    rel_base = Addr(*c);
  }

  std::int64_t lo = 0, hi = 0;
  if (strategy == JtStrategy::pattern_radare2) {
    auto k = pattern_bound(back);
    if (!k) return fail(UnresolvedReason::no_bound);
    hi = *k;
  } else {
    const Value& v = (*st)[index];
    if (!v.guarded || !v.finite() || v.lo < 0)
      return fail(truncated ? UnresolvedReason::slice_depth_exhausted
                            : UnresolvedReason::no_bound);
    lo = v.lo;
    hi = v.hi;
  }
  if (hi < lo) return fail(UnresolvedReason::no_bound);
  if (config.jt_bound_threshold && std::uint64_t(hi) > config.jt_bound_threshold)
    return fail(UnresolvedReason::bound_exceeds_threshold);

  JumpTable t;
  t.site = site;
  t.base = *table;
  t.entry_width = shape->width;
  t.index_low = lo;
  t.index_high = hi;
  t.encoding = shape->encoding;
  for (std::int64_t i = lo; i <= hi; ++i) {
    Addr slot = *table + Addr(i) * shape->mem.scale;
    auto raw = image.read_uint(slot, shape->width);
    if (!raw) return fail(UnresolvedReason::no_pattern);
    Addr target = *raw;
    if (t.encoding == TableEncoding::base_relative_signed) {
      unsigned bits = 8 * shape->width;
      std::int64_t off = bits < 64 ? std::int64_t(*raw << (64 - bits)) >> (64 - bits)
                                   : std::int64_t(*raw);
      target = rel_base + Addr(off);
    }
    if (image.mode == Mode::x86) target &= 0xffffffff;
    if (!image.is_executable(target)) return fail(UnresolvedReason::no_pattern);
    t.targets.push_back(target);
  }
  return t;
}

std::vector<Addr> constant_prop_call_targets(const BinaryImage& image,
                                             const DisasmResult& result,
                                             Addr site, CallScope scope,
                                             const CfgHooks& hooks,
                                             const FunctionMap* functions) {
  const Instruction* ins = result.at(site);
  const BasicBlock* sb = result.block_containing(site);
  if (!ins || !sb || scope == CallScope::none || ins->operands.empty()) return {};
  std::set<Addr> blocks{sb->start};
  if (scope == CallScope::function) {
    bool owned = false;
    if (functions)
      for (Addr e : functions->owners_of(result, site)) {
        const auto& body = functions->bodies.at(e);
        blocks.insert(body.begin(), body.end());
        owned = true;
      }
    if (!owned)
      blocks = backward_blocks(analysis_predecessors(result, hooks), sb->start, 0, {});
  }
  IntervalAnalysis ia(image, result, hooks, blocks);
  auto st = ia.before(site);
  if (!st) return {};
  const Operand& op = ins->operands[0];
  std::optional<Addr> target;
  if (op.kind == OperandKind::reg) {
    if (auto c = (*st)[op.reg].as_const()) target = Addr(*c);
  } else if (op.kind == OperandKind::mem) {
    if (auto a = ia.address_of(op.mem, *st, *ins); a && image.is_data(*a))
      target = image.read_uint(*a, machine_size(image.mode));
  }
  if (!target) return {};
  if (image.mode == Mode::x86) *target &= 0xffffffff;
  if (!image.is_executable(*target)) return {};
  return {*target};
}

namespace {

bool teardown_before(const DisasmResult& r, const Instruction& site) {
  auto it = r.instructions.find(site.vaddr);
  if (it == r.instructions.begin()) return false;
  const Instruction& p = std::prev(it)->second;
  if (p.end() != site.vaddr) return false;
  if (p.op == Op::leave || p.op == Op::pop) return true;
  return p.op == Op::add && p.operands.size() == 2 &&
         p.operands[0].kind == OperandKind::reg && p.operands[0].reg == Reg::sp &&
         p.operands[1].kind == OperandKind::imm;
}

// Reached from just after the site by fallthroughs and not-taken arms only.
bool reached_by_fallthrough(const DisasmResult& r, const Instruction& site, Addr t) {
  Addr a = site.end();
  for (int guard = 0; guard < 100000; ++guard) {
    if (a == t) return true;
    const Instruction* i = r.at(a);
    if (!i || (i->flow != FlowKind::fallthrough && i->flow != FlowKind::cond_jump))
      return false;
    a = i->end();
  }
  return false;
}

// Every transfer into t is an unconditional jump or a direct call.
bool only_unconditional_into(const DisasmResult& r, Addr t) {
  for (const auto& [a, ins] : r.instructions) {
    if (ins.branch_target == t && ins.flow != FlowKind::jump_direct &&
        ins.flow != FlowKind::call_direct)
      return false;
    if (ins.end() == t && !ends_path(ins.flow) && !is_call(ins.flow)) return false;
  }
  return true;
}

}  // namespace

std::vector<TailCall> detect_tail_calls(const BinaryImage& image,
                                        const DisasmResult& result,
                                        const std::vector<FunctionEntry>& entries,
                                        TailRules rules,
                                        const StrategyConfig& config,
                                        const CfgHooks& hooks) {
  std::vector<TailCall> out;
  if (rules == TailRules::none) return out;
  std::set<Addr> known, all;
  for (const auto& e : entries) {
    all.insert(e.vaddr);
    if (e.source != EntrySource::tail_call_target) known.insert(e.vaddr);
  }
  // Bodies without previous tail-call decisions so sites stay attributable.
  CfgHooks body_hooks = hooks;
  body_hooks.tail_calls.clear();
  FunctionMap fm = function_bodies(result, known, body_hooks);

  for (const auto& [a, ins] : result.instructions) {
    if (ins.flow != FlowKind::jump_direct && ins.flow != FlowKind::cond_jump) continue;
    Addr t = *ins.branch_target;
    if (!result.instructions.count(t)) continue;
    auto owners = fm.owners_of(result, a);
    bool own_entry = std::find(owners.begin(), owners.end(), t) != owners.end();
    bool uncond = ins.flow == FlowKind::jump_direct;
    std::string rule;
    switch (rules) {
      case TailRules::radare2: {
        Addr d = t > a ? t - a : a - t;
        if (d > config.tailcall_distance) rule = "radare2.distance";
        break;
      }
      case TailRules::ghidra: {
        if (!uncond) break;
        auto lo = t > a ? known.upper_bound(a) : known.lower_bound(t);
        bool crosses = t > a ? (lo != known.end() && *lo <= t)
                             : (lo != known.end() && *lo < a);
        if (crosses && !own_entry) rule = "ghidra.span";
        break;
      }
      case TailRules::dyninst:
        if (known.count(t) && !own_entry)
          rule = "dyninst.known_entry";
        else if (uncond && teardown_before(result, ins) &&
                 !reached_by_fallthrough(result, ins, t))
          rule = "dyninst.teardown";
        break;
      case TailRules::angr: {
        if (!uncond) break;
        if (known.count(t) && !own_entry) {
          rule = "angr.known_entry";
          break;
        }
        if (owners.empty()) break;
        Addr owner = owners.front();
        AnalysisOptions opt;
        opt.entry_zero = Reg::sp;
        IntervalAnalysis ia(image, result, body_hooks, fm.bodies.at(owner), opt);
        auto st = ia.before(a);
        if (!st || (*st)[Reg::sp].as_const() != std::optional<std::int64_t>(0)) break;
        auto towners = fm.owners_of(result, t);
        bool foreign_mid = false;
        for (Addr o : towners)
          if (o != owner && o != t) foreign_mid = true;
        if (foreign_mid || !only_unconditional_into(result, t)) break;
        bool inside = std::find(towners.begin(), towners.end(), owner) != towners.end();
        // A target inside the current body counts only if no other path
        // of the body reaches it.
        if (inside) {
          CfgHooks h = body_hooks;
          h.tail_calls.insert(a);
          DisasmResult copy = result;
          rebuild_blocks(copy, h);
          auto fm2 = function_bodies(copy, known, h);
          const BasicBlock* tb = copy.block_containing(t);
          if (tb && fm2.bodies.count(owner) && fm2.bodies.at(owner).count(tb->start))
            break;
        }
        rule = "angr.heuristic";
        break;
      }
      case TailRules::none: break;
    }
    if (!rule.empty()) out.push_back({a, t, rule});
  }
  (void)all;
  return out;
}

CFG finalize_cfg(const DisasmResult& result, const std::vector<JumpTable>& tables,
                 const std::vector<TailCall>& tail_calls, const NonRetSet& nonret,
                 const CfgHooks& hooks, const FunctionMap* functions) {
  CFG g = build_edges(result, hooks, functions);
  for (const auto& t : tables) {
    const BasicBlock* b = result.block_containing(t.site);
    if (!b) continue;
    for (Addr x : t.targets)
      if (result.block_at(x)) g.edges.push_back({b->start, x, EdgeKind::table});
  }
  // Fallthrough edges out of blocks that end in calls to non-returning
  // functions cannot exist since calls carry no edges; drop any stragglers.
  std::erase_if(g.edges, [&](const Edge& e) {
    const BasicBlock* b = result.block_at(e.from);
    if (!b) return false;
    const Instruction* last = last_of(result, *b);
    return last && last->flow == FlowKind::call_direct &&
           nonret.members.count(*last->branch_target);
  });
  if (functions)
    for (const auto& tc : tail_calls)
      for (Addr caller : functions->owners_of(result, tc.site))
        g.call_graph.push_back({caller, tc.target, tc.site});
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  std::sort(g.call_graph.begin(), g.call_graph.end());
  g.call_graph.erase(std::unique(g.call_graph.begin(), g.call_graph.end()),
                     g.call_graph.end());
  return g;
}

}  // namespace dislab
