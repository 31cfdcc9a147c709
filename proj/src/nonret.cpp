#include <algorithm>
#include <functional>

#include "dislab/cfg.hpp"

namespace dislab {

std::set<Addr> seed_addresses(const BinaryImage& image,
                              const std::vector<std::string>& names) {
  std::set<Addr> out;
  for (const auto& s : image.symbols) {
    std::string_view n = s.name;
    if (auto at = n.find('@'); at != std::string_view::npos) n = n.substr(0, at);
    if (std::find(names.begin(), names.end(), n) != names.end()) out.insert(s.vaddr);
  }
  return out;
}

bool may_return(const DisasmResult& result, Addr f, const std::set<Addr>& entries,
                const std::set<Addr>& nonret, const CfgHooks& hooks, bool all_paths) {
  std::set<Addr> seen;
  std::vector<Addr> work{f};
  auto leaves_to = [&](Addr t) {
    // Control transfers to another function without returning here first.
    return !nonret.count(t);
  };
  while (!work.empty()) {
    Addr a = work.back();
    work.pop_back();
    if (!seen.insert(a).second) continue;
    if (a != f && entries.count(a)) {
      if (leaves_to(a)) return true;
      continue;
    }
    const Instruction* ins = result.at(a);
    if (!ins) {
      if (all_paths) return true;
      continue;
    }
    switch (ins->flow) {
      case FlowKind::ret: return true;
      case FlowKind::halt:
        if (all_paths) return true;
        break;
      case FlowKind::fallthrough: work.push_back(ins->end()); break;
      case FlowKind::cond_jump:
        work.push_back(*ins->branch_target);
        work.push_back(ins->end());
        break;
      case FlowKind::jump_direct: {
        Addr t = *ins->branch_target;
        if (hooks.tail_calls.count(a) && t != f) {
          if (leaves_to(t)) return true;
        } else {
          work.push_back(t);
        }
        break;
      }
      case FlowKind::jump_indirect: {
        auto it = hooks.jump_targets.find(a);
        if (it == hooks.jump_targets.end() || hooks.jumps_as_calls.count(a))
          return true;  // unresolved: may return
        for (Addr t : it->second) work.push_back(t);
        break;
      }
      case FlowKind::call_direct:
        if (!nonret.count(*ins->branch_target)) work.push_back(ins->end());
        break;
      case FlowKind::call_indirect: {
        auto it = hooks.call_targets.find(a);
        bool stops = it != hooks.call_targets.end() && !it->second.empty() &&
                     std::all_of(it->second.begin(), it->second.end(),
                                 [&](Addr t) { return nonret.count(t) > 0; });
        if (!stops) work.push_back(ins->end());
        break;
      }
    }
  }
  return false;
}

namespace {

// Direct callees and transfer targets that are entries, per function.
std::map<Addr, std::set<Addr>> callees(const DisasmResult& result,
                                       const std::set<Addr>& entries,
                                       const CfgHooks& hooks) {
  std::map<Addr, std::set<Addr>> out;
  for (Addr f : entries) {
    auto& cs = out[f];
    std::set<Addr> seen;
    std::vector<Addr> work{f};
    while (!work.empty()) {
      Addr a = work.back();
      work.pop_back();
      if (!seen.insert(a).second) continue;
      if (a != f && entries.count(a)) {
        cs.insert(a);
        continue;
      }
      const Instruction* ins = result.at(a);
      if (!ins) continue;
      if (ins->flow == FlowKind::call_direct) cs.insert(*ins->branch_target);
      if (ins->flow == FlowKind::call_indirect)
        if (auto it = hooks.call_targets.find(a); it != hooks.call_targets.end())
          cs.insert(it->second.begin(), it->second.end());
      for (Addr s : flow_successors(*ins, {})) work.push_back(s);
      if (ins->flow == FlowKind::jump_indirect)
        if (auto it = hooks.jump_targets.find(a); it != hooks.jump_targets.end())
          for (Addr t : it->second) work.push_back(t);
      if (is_call(ins->flow)) work.push_back(ins->end());
    }
  }
  return out;
}

void propagate_worklist(const DisasmResult& r, const std::set<Addr>& entries,
                        std::set<Addr>& nr, const CfgHooks& hooks, bool all_paths) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (Addr f : entries) {
      if (nr.count(f)) continue;
      if (!may_return(r, f, entries, nr, hooks, all_paths)) {
        nr.insert(f);
        changed = true;
      }
    }
  }
}

void propagate_depth_first(const DisasmResult& r, const std::set<Addr>& entries,
                           std::set<Addr>& nr, const CfgHooks& hooks) {
  auto graph = callees(r, entries, hooks);
  // Tarjan; components come out callees first.
  std::map<Addr, int> index, low;
  std::set<Addr> on_stack;
  std::vector<Addr> stack;
  std::vector<std::vector<Addr>> sccs;
  int counter = 0;
  std::function<void(Addr)> visit = [&](Addr v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (Addr w : graph[v]) {
      if (!entries.count(w)) continue;
      if (!index.count(w)) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<Addr> comp;
      Addr w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        comp.push_back(w);
      } while (w != v);
      sccs.push_back(std::move(comp));
    }
  };
  for (Addr f : entries)
    if (!index.count(f)) visit(f);
  for (const auto& comp : sccs) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (Addr f : comp) {
        if (nr.count(f)) continue;
        if (!may_return(r, f, entries, nr, hooks, false)) {
          nr.insert(f);
          changed = true;
        }
      }
    }
  }
  // Members found late can still affect earlier components through
  // fallthrough into entries; finish with the plain fixed point.
  propagate_worklist(r, entries, nr, hooks, false);
}

bool unsafe_fallthrough(const BinaryImage& image, const DisasmResult& r,
                        const Instruction& call, const std::set<Addr>& entries,
                        const std::set<Addr>& xref_targets) {
  Addr a = call.end();
  return !image.is_executable(a) || !r.at(a) || entries.count(a) ||
         xref_targets.count(a);
}

}  // namespace

NonRetSet detect_nonreturning(const BinaryImage& image, const DisasmResult& result,
                              const std::vector<Addr>& entry_list,
                              const StrategyConfig& config, const CfgHooks& hooks,
                              const std::set<Addr>& xref_targets) {
  NonRetSet out;
  if (config.nonret_mode == NonRetMode::none) return out;
  auto names = resolved_nonret_seeds(config);
  out.seeds.insert(names.begin(), names.end());
  std::set<Addr> seeds = seed_addresses(image, names);
  std::set<Addr> entries(entry_list.begin(), entry_list.end());
  std::set<Addr>& nr = out.members;
  nr = seeds;

  switch (config.nonret_mode) {
    case NonRetMode::none: break;
    case NonRetMode::no_ret_scan:
      switch (config.nonret_propagation) {
        case Propagation::assume_fallthrough:
          // One pass in address order; callees not yet decided are
          // assumed to return.
          for (Addr f : entries)
            if (!nr.count(f) && !may_return(result, f, entries, nr, hooks, false))
              nr.insert(f);
          break;
        case Propagation::worklist_propagate:
          propagate_worklist(result, entries, nr, hooks, false);
          break;
        case Propagation::depth_first:
          propagate_depth_first(result, entries, nr, hooks);
          break;
      }
      break;
    case NonRetMode::all_paths:
      propagate_worklist(result, entries, nr, hooks, true);
      break;
    case NonRetMode::fallthrough_evidence:
      for (std::uint64_t pass = 0; pass < config.nonret_passes; ++pass) {
        std::map<Addr, std::uint64_t> unsafe;
        for (const auto& [a, ins] : result.instructions)
          if (ins.flow == FlowKind::call_direct &&
              unsafe_fallthrough(image, result, ins, entries, xref_targets))
            ++unsafe[*ins.branch_target];
        for (auto [t, n] : unsafe)
          if (n >= config.nonret_unsafe_fallthroughs) nr.insert(t);
        for (Addr f : entries)
          if (!nr.count(f) && !may_return(result, f, entries, nr, hooks, false))
            nr.insert(f);
      }
      break;
  }
  return out;
}

}  // namespace dislab
