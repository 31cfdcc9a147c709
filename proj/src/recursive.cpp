#include "dislab/recursive.hpp"

#include <algorithm>

#include "dislab/funcid.hpp"
#include "dislab/sweep.hpp"
#include "dislab/symbolize.hpp"

namespace dislab {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::seed_reachable: return "seed_reachable";
    case Provenance::prologue_match: return "prologue_match";
    case Provenance::gap_scan: return "gap_scan";
    case Provenance::xref_seed: return "xref_seed";
    case Provenance::linear: return "linear";
  }
  return "?";
}

const Instruction* DisasmResult::at(Addr a) const {
  auto it = instructions.find(a);
  return it == instructions.end() ? nullptr : &it->second;
}

const Instruction* DisasmResult::covering(Addr a) const {
  auto it = instructions.upper_bound(a);
  if (it == instructions.begin()) return nullptr;
  --it;
  return a < it->second.end() ? &it->second : nullptr;
}

const BasicBlock* DisasmResult::block_at(Addr start) const {
  auto it = std::lower_bound(
      blocks.begin(), blocks.end(), start,
      [](const BasicBlock& b, Addr v) { return b.start < v; });
  return it != blocks.end() && it->start == start ? &*it : nullptr;
}

const BasicBlock* DisasmResult::block_containing(Addr a) const {
  auto it = std::upper_bound(
      blocks.begin(), blocks.end(), a,
      [](Addr v, const BasicBlock& b) { return v < b.start; });
  if (it == blocks.begin()) return nullptr;
  --it;
  return a < it->end ? &*it : nullptr;
}

std::vector<Addr> flow_successors(const Instruction& ins, const CfgHooks& hooks) {
  switch (ins.flow) {
    case FlowKind::fallthrough: return {ins.end()};
    case FlowKind::cond_jump: return {*ins.branch_target, ins.end()};
    case FlowKind::jump_direct:
      if (hooks.tail_calls.count(ins.vaddr)) return {};
      return {*ins.branch_target};
    case FlowKind::jump_indirect: {
      if (hooks.jumps_as_calls.count(ins.vaddr)) return {};
      auto it = hooks.jump_targets.find(ins.vaddr);
      if (it == hooks.jump_targets.end()) return {};
      return it->second;
    }
    default: return {};
  }
}

namespace {

class Engine {
 public:
  Engine(const BinaryImage& img, const CfgHooks& hooks, const Decoder& dec)
      : img_(img), hooks_(hooks), dec_(dec) {}

  // Descends from seed. Transactional descents keep nothing if any
  // decode error or conflicting transfer is met. Returns the number of
  // instructions added.
  std::size_t descend(DisasmResult& r, Addr seed, Provenance prov,
                      bool transactional) {
    std::map<Addr, Instruction> added;
    std::vector<DescentFailure> fails;
    std::vector<std::pair<Addr, Addr>> work{{seed, seed}};
    auto covered_mid = [&](Addr a) {
      for (const auto* m : {&r.instructions, &added}) {
        auto it = m->upper_bound(a);
        if (it == m->begin()) continue;
        --it;
        if (it->first < a && a < it->second.end()) return true;
      }
      return false;
    };
    auto start_inside = [&](Addr lo, Addr hi) {
      for (const auto* m : {&r.instructions, &added}) {
        auto it = m->upper_bound(lo);
        if (it != m->end() && it->first < hi) return true;
      }
      return false;
    };
    while (!work.empty()) {
      auto [a, from] = work.back();
      work.pop_back();
      if (r.instructions.count(a) || added.count(a)) continue;
      const Section* sec = img_.section_at(a);
      FailureReason why;
      bool failed = false;
      if (!sec || !sec->executable) {
        why = FailureReason::unmapped;
        failed = true;
      } else if (covered_mid(a)) {
        why = FailureReason::overlap;
        failed = true;
      }
      Instruction ins;
      if (!failed) {
        auto res = dec_.decode(img_.bytes_from(a), a, img_.mode);
        if (auto* p = std::get_if<Instruction>(&res)) {
          ins = std::move(*p);
          if (start_inside(a, ins.end())) {
            why = FailureReason::overlap;
            failed = true;
          }
        } else {
          why = FailureReason::bad_opcode;
          failed = true;
        }
      }
      if (failed) {
        if (transactional) return 0;
        fails.push_back({a, why, from});
        continue;
      }
      push_successors(ins, work);
      added.emplace(a, std::move(ins));
    }
    for (auto& [a, ins] : added) {
      r.provenance[a] = prov;
      r.instructions.emplace(a, std::move(ins));
    }
    r.failures.insert(r.failures.end(), fails.begin(), fails.end());
    if (!added.empty() || prov == Provenance::seed_reachable)
      r.roots.push_back(seed);
    return added.size();
  }

 private:
  void push_successors(const Instruction& ins,
                       std::vector<std::pair<Addr, Addr>>& work) const {
    Addr a = ins.vaddr;
    auto call_falls_through = [&](const std::vector<Addr>& targets) {
      if (targets.empty()) return true;
      return !std::all_of(targets.begin(), targets.end(), [&](Addr t) {
        return hooks_.nonreturning.count(t) > 0;
      });
    };
    switch (ins.flow) {
      case FlowKind::call_direct: {
        Addr t = *ins.branch_target;
        work.push_back({t, a});
        if (call_falls_through({t})) work.push_back({ins.end(), a});
        break;
      }
      case FlowKind::call_indirect: {
        std::vector<Addr> ts;
        if (auto it = hooks_.call_targets.find(a); it != hooks_.call_targets.end())
          ts = it->second;
        for (Addr t : ts) work.push_back({t, a});
        if (call_falls_through(ts)) work.push_back({ins.end(), a});
        break;
      }
      case FlowKind::jump_indirect: {
        if (hooks_.jumps_as_calls.count(a)) {
          if (auto it = hooks_.call_targets.find(a);
              it != hooks_.call_targets.end())
            for (Addr t : it->second) work.push_back({t, a});
          break;
        }
        auto succ = flow_successors(ins, hooks_);
        for (auto it = succ.rbegin(); it != succ.rend(); ++it)
          work.push_back({*it, a});
        break;
      }
      case FlowKind::jump_direct:
        work.push_back({*ins.branch_target, a});
        break;
      case FlowKind::cond_jump:
        work.push_back({*ins.branch_target, a});
        work.push_back({ins.end(), a});
        break;
      case FlowKind::fallthrough:
        work.push_back({ins.end(), a});
        break;
      case FlowKind::ret:
      case FlowKind::halt:
        break;
    }
  }

  const BinaryImage& img_;
  const CfgHooks& hooks_;
  const Decoder& dec_;
};

void update_pending(DisasmResult& r, const CfgHooks& hooks) {
  r.pending_indirect.clear();
  for (const auto& [a, ins] : r.instructions) {
    if (ins.flow == FlowKind::jump_indirect && !hooks.jump_targets.count(a) &&
        !hooks.jumps_as_calls.count(a))
      r.pending_indirect.push_back(a);
    if (ins.flow == FlowKind::call_indirect && !hooks.call_targets.count(a))
      r.pending_indirect.push_back(a);
  }
}

std::uint64_t gap_bytes(const DisasmResult& r, const BinaryImage& img) {
  std::uint64_t n = 0;
  for (const auto& g : gap_regions(r, img)) n += g.size;
  return n;
}

// ANGR-style probe: does a block decode cleanly from p? Returns the
// failing address when it does not.
std::optional<Addr> probe_block(const BinaryImage& img, const DisasmResult& r,
                                Addr p, const Decoder& dec) {
  Addr q = p;
  for (;;) {
    if (q != p && r.instructions.count(q)) return std::nullopt;
    const Section* sec = img.section_at(q);
    if (!sec || !sec->executable || r.covering(q)) return q;
    auto res = dec.decode(img.bytes_from(q), q, img.mode);
    const auto* ins = std::get_if<Instruction>(&res);
    if (!ins) return q;
    auto next = r.instructions.upper_bound(q);
    if (next != r.instructions.end() && next->first < ins->end()) return q;
    if (ins->flow != FlowKind::fallthrough) return std::nullopt;
    q = ins->end();
  }
}

}  // namespace

DisasmResult recursive_descent(const BinaryImage& image,
                               const std::vector<Addr>& seeds,
                               const CfgHooks& hooks,
                               const StrategyConfig& /*config*/,
                               const Decoder& dec) {
  DisasmResult r;
  Engine eng(image, hooks, dec);
  for (Addr s : seeds) {
    if (!image.is_executable(s)) continue;
    eng.descend(r, s, Provenance::seed_reachable, false);
  }
  update_pending(r, hooks);
  rebuild_blocks(r, hooks);
  return r;
}

std::vector<Range> gap_regions(const DisasmResult& result,
                               const BinaryImage& image) {
  std::vector<Range> out;
  for (const auto& sec : image.sections) {
    if (!sec.executable) continue;
    Addr cur = sec.vaddr;
    auto it = result.instructions.lower_bound(sec.vaddr);
    if (it != result.instructions.begin()) {
      auto prev = std::prev(it);
      cur = std::max(cur, prev->second.end());
    }
    for (; it != result.instructions.end() && it->first < sec.end(); ++it) {
      if (it->first > cur) out.push_back({cur, it->first - cur});
      cur = std::max(cur, it->second.end());
    }
    if (cur < sec.end()) out.push_back({cur, sec.end() - cur});
  }
  return out;
}

DisasmResult apply_gap_heuristics(DisasmResult r, const BinaryImage& image,
                                  const StrategyConfig& config,
                                  const CfgHooks& hooks, const Decoder& dec) {
  Engine eng(image, hooks, dec);
  for (;;) {
    std::uint64_t before = gap_bytes(r, image);
    if (config.prologue_match) {
      auto hits = match_prologues(image, gap_regions(r, image),
                                  config.prologue_set, dec);
      for (Addr h : hits) {
        if (r.instructions.count(h) || r.covering(h)) continue;
        if (eng.descend(r, h, Provenance::prologue_match, false))
          r.prologue_hits.push_back(h);
      }
    }
    if (config.gap_scan) {
      for (const auto& g : gap_regions(r, image)) {
        Addr p = g.start;
        while (p < g.end()) {
          if (r.covering(p)) {
            ++p;
            continue;
          }
          if (auto fail = probe_block(image, r, p, dec)) {
            p = *fail + 1;
            continue;
          }
          if (eng.descend(r, p, Provenance::gap_scan, false))
            r.scan_begins.push_back(p);
          else
            ++p;
        }
      }
    }
    if (config.xref_seed) {
      for (Addr t : gap_code_targets(image, r, config)) {
        if (r.instructions.count(t) || r.covering(t)) continue;
        if (eng.descend(r, t, Provenance::xref_seed, true))
          r.xref_seeds.push_back(t);
      }
    }
    if (gap_bytes(r, image) >= before) break;
  }
  update_pending(r, hooks);
  rebuild_blocks(r, hooks);
  return r;
}

void rebuild_blocks(DisasmResult& r, const CfgHooks& hooks) {
  std::set<Addr> leaders(r.roots.begin(), r.roots.end());
  Addr prev_end = 0;
  bool first = true;
  for (const auto& [a, ins] : r.instructions) {
    if (first || a != prev_end) leaders.insert(a);
    first = false;
    prev_end = ins.end();
    if (ins.branch_target) leaders.insert(*ins.branch_target);
    if (ins.flow != FlowKind::fallthrough) leaders.insert(ins.end());
    if (ins.flow == FlowKind::jump_indirect) {
      if (auto it = hooks.jump_targets.find(a); it != hooks.jump_targets.end())
        leaders.insert(it->second.begin(), it->second.end());
    }
  }
  r.blocks.clear();
  BasicBlock cur;
  bool open = false;
  auto close = [&](const Instruction& last) {
    for (Addr s : flow_successors(last, hooks))
      if (r.instructions.count(s)) cur.successors.push_back(s);
    std::sort(cur.successors.begin(), cur.successors.end());
    cur.successors.erase(
        std::unique(cur.successors.begin(), cur.successors.end()),
        cur.successors.end());
    r.blocks.push_back(std::move(cur));
    cur = {};
    open = false;
  };
  const Instruction* last = nullptr;
  for (const auto& [a, ins] : r.instructions) {
    if (open && (leaders.count(a) || a != cur.end)) close(*last);
    if (!open) {
      cur.start = a;
      open = true;
    }
    cur.end = ins.end();
    last = &ins;
    if (ins.flow != FlowKind::fallthrough) close(ins);
  }
  if (open) close(*last);
}

DisasmResult from_sweep(const SweepResult& sweep) {
  DisasmResult r;
  r.instructions = sweep.instructions;
  for (const auto& [a, ins] : r.instructions) r.provenance[a] = Provenance::linear;
  rebuild_blocks(r, {});
  return r;
}

}  // namespace dislab
