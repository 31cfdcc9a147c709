#include "dislab/pipeline.hpp"

#include <algorithm>

namespace dislab {

namespace {

struct Round {
  DisasmResult disasm;
  std::vector<FunctionEntry> functions;
  FunctionMap fm;
  std::vector<JumpTable> tables;
  std::vector<Unresolved> unresolved;
  std::vector<TailCall> tail_calls;
  NonRetSet nonret;
  CfgHooks next;
};

Round run_round(const BinaryImage& image, const StrategyConfig& cfg,
                const std::vector<Addr>& seeds, const CfgHooks& hooks,
                const EntryEvidence& base_evidence,
                const std::vector<TailCall>& prior_tail, const Decoder& dec) {
  Round rd;
  rd.disasm = recursive_descent(image, seeds, hooks, cfg, dec);
  rd.disasm = apply_gap_heuristics(std::move(rd.disasm), image, cfg, hooks, dec);
  const DisasmResult& r = rd.disasm;

  EntryEvidence ev = base_evidence;
  for (const auto& [site, ts] : hooks.call_targets)
    ev.indirect_call_targets.insert(ev.indirect_call_targets.end(), ts.begin(), ts.end());
  for (const auto& tc : prior_tail) ev.tail_call_targets.push_back(tc.target);
  rd.functions = collect_entries(image, r, ev, cfg);
  std::set<Addr> entry_set;
  std::vector<Addr> entry_list;
  for (const auto& e : rd.functions) {
    entry_set.insert(e.vaddr);
    entry_list.push_back(e.vaddr);
  }
  rd.fm = function_bodies(r, entry_set, hooks);

  CfgHooks& next = rd.next;
  for (const auto& [a, ins] : r.instructions) {
    if (ins.flow != FlowKind::jump_indirect || cfg.jt_strategy == JtStrategy::none)
      continue;
    auto res = resolve_jump_table(image, r, a, cfg.jt_strategy, cfg, hooks, &rd.fm);
    if (auto* t = std::get_if<JumpTable>(&res)) {
      std::vector<Addr> ts = t->targets;
      std::sort(ts.begin(), ts.end());
      ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
      next.jump_targets[a] = ts;
      rd.tables.push_back(std::move(*t));
    } else {
      rd.unresolved.push_back(std::get<Unresolved>(res));
      if (cfg.jt_strategy == JtStrategy::path_ghidra) next.jumps_as_calls.insert(a);
    }
  }
  if (cfg.icall_scope != CallScope::none) {
    for (const auto& [a, ins] : r.instructions) {
      bool site = ins.flow == FlowKind::call_indirect || next.jumps_as_calls.count(a);
      if (!site) continue;
      auto ts = constant_prop_call_targets(image, r, a, cfg.icall_scope, hooks, &rd.fm);
      if (!ts.empty()) next.call_targets[a] = ts;
    }
  }
  rd.tail_calls = detect_tail_calls(image, r, rd.functions, cfg.tailcall_rules, cfg, hooks);
  for (const auto& tc : rd.tail_calls)
    if (r.at(tc.site)->flow == FlowKind::jump_direct) next.tail_calls.insert(tc.site);

  std::set<Addr> referenced;
  for (const auto& [a, ins] : r.instructions)
    for (const auto& c : ins.const_operands) referenced.insert(c.value);
  rd.nonret = detect_nonreturning(image, r, entry_list, cfg, hooks, referenced);
  next.nonreturning = rd.nonret.members;
  return rd;
}

}  // namespace

AnalysisResult analyze(const BinaryImage& image, const StrategyConfig& config,
                       const Decoder& dec) {
  AnalysisResult out;
  out.config = config;

  if (config.algorithm == Algorithm::linear) {
    out.sweep = linear_sweep(image, code_regions(image), config.sweep_policy, dec);
    out.disasm = from_sweep(*out.sweep);
    if (config.symbolize) out.symbols = symbolize(image, out.disasm, config);
    out.rounds = 1;
    return out;
  }

  out.main = find_main(image, nullptr, config.main_method, dec);
  EntryEvidence ev;
  ev.main = out.main;
  if (config.eh_frame) {
    try {
      ev.eh_frame = eh_frame_entries(image);
    } catch (const EhFrameError& e) {
      out.warnings.push_back(e.what());
    }
  }
  std::vector<Addr> seeds{image.entry_point};
  if (config.seed_symbols) seeds = symbol_seeds(image);
  if (config.seed_main && out.main) seeds.push_back(*out.main);
  seeds.insert(seeds.end(), ev.eh_frame.begin(), ev.eh_frame.end());
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  CfgHooks hooks;
  std::vector<TailCall> prior_tail;
  Round rd;
  for (unsigned round = 1; round <= std::max<std::uint64_t>(1, config.max_rounds); ++round) {
    rd = run_round(image, config, seeds, hooks, ev, prior_tail, dec);
    out.rounds = round;
    bool stable = rd.next == hooks;
    if (stable) break;
    if (round == config.max_rounds) {
      out.warnings.push_back("analysis did not reach a fixed point");
      break;
    }
    hooks = rd.next;
    prior_tail = rd.tail_calls;
  }

  out.disasm = std::move(rd.disasm);
  out.functions = std::move(rd.functions);
  out.tables = std::move(rd.tables);
  out.unresolved_tables = std::move(rd.unresolved);
  out.tail_calls = std::move(rd.tail_calls);
  out.nonret = std::move(rd.nonret);
  out.hooks = hooks;

  if (config.symbolize) {
    SymbolContext ctx;
    for (const auto& f : out.functions) ctx.entries.insert(f.vaddr);
    for (const auto& [e, body] : rd.fm.bodies)
      for (Addr b : body)
        if (const BasicBlock* bb = out.disasm.block_at(b))
          for (auto it = out.disasm.instructions.lower_bound(bb->start);
               it != out.disasm.instructions.end() && it->first < bb->end; ++it)
            ctx.owned.insert(it->first);
    out.symbols = symbolize(image, out.disasm, config, ctx);
  }
  out.cfg = finalize_cfg(out.disasm, out.tables, out.tail_calls, out.nonret, hooks, &rd.fm);
  return out;
}

}  // namespace dislab
