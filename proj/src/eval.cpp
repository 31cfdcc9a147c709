#include "dislab/eval.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "dislab/decode.hpp"

namespace dislab {

Metrics make_metrics(Phase phase, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  Metrics m;
  m.phase = phase;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp ? double(tp) / double(tp + fp) : 1.0;
  m.recall = tp + fn ? double(tp) / double(tp + fn) : 1.0;
  return m;
}

namespace {

Item one(Addr a) { return {a, 0, 0}; }
Item two(Addr a, Addr b) { return {a, b, 0}; }

// Function of the truth that owns a: nearest entry at or below a.
std::optional<Addr> owner(const Record& truth, Addr a) {
  auto it = truth.functions.upper_bound(a);
  if (it == truth.functions.begin()) return std::nullopt;
  return std::prev(it)->first;
}

std::set<Addr> table_targets(const TableRecord& t) {
  return {t.targets.begin(), t.targets.end()};
}

std::set<Item> items_of(const Record& truth, const Record& side, Phase phase) {
  std::set<Item> out;
  if (!side.has_phase(phase)) return out;
  switch (phase) {
    case Phase::inst:
      for (const auto& [a, ir] : side.instructions)
        if (!truth.in_padding(a)) out.insert(one(a));
      break;
    case Phase::xref:
      for (const auto& x : side.xrefs) {
        bool from_code = x.kind == XrefKind::c2c || x.kind == XrefKind::c2d;
        // References made by instructions that are not real are dropped.
        if (from_code && !truth.instructions.count(x.from)) continue;
        out.insert({x.from, x.to, Addr(x.kind)});
      }
      break;
    case Phase::func:
      for (const auto& [a, tag] : side.functions) out.insert(one(a));
      break;
    case Phase::edge:
      for (const auto& [a, b] : side.edges) out.insert(two(a, b));
      break;
    case Phase::cg:
      for (const auto& [a, b] : side.call_graph) out.insert(two(a, b));
      break;
    case Phase::tailcall:
      for (const auto& [site, target] : side.tail_calls)
        if (owner(truth, site) != std::optional<Addr>(target)) out.insert(one(target));
      break;
    case Phase::nonret:
      for (Addr a : side.nonret) out.insert(one(a));
      break;
    case Phase::jtab:
      for (const auto& [site, t] : side.tables) out.insert(one(site));
      break;
  }
  return out;
}

}  // namespace

PhaseItems phase_items(const Record& truth, const Record& result, Phase phase) {
  return {items_of(truth, truth, phase), items_of(truth, result, phase)};
}

Metrics score(const Record& truth, const Record& result, Phase phase) {
  PhaseItems it = phase_items(truth, result, phase);
  std::uint64_t tp = 0;
  if (phase == Phase::jtab) {
    for (const Item& s : it.result)
      if (it.truth.count(s) &&
          table_targets(truth.tables.at(s[0])) == table_targets(result.tables.at(s[0])))
        ++tp;
  } else {
    for (const Item& x : it.result) tp += it.truth.count(x);
  }
  return make_metrics(phase, tp, it.result.size() - tp, it.truth.size() - tp);
}

const std::vector<std::string>& cause_vocabulary(Phase phase, bool fp) {
  static const std::map<std::pair<Phase, bool>, std::vector<std::string>> v{
      {{Phase::inst, true}, {"Pad", "Data", "Func", "Non-Ret", "Jump-Tbl", "Other"}},
      {{Phase::xref, true}, {"Align", "Type-based Sliding", "Extended-data", "Collision", "Other"}},
      {{Phase::xref, false}, {"Align", "Type", "Extended-data", "Address Table", "Func", "Other"}},
      {{Phase::func, true}, {"Mismatch", "J-Tab", "Scan", "T-Call", "Mis-disa", "Other"}},
      {{Phase::func, false}, {"J-Tab", "T-Call", "Non-Ret", "FP-Overlap", "No-Match", "Other"}},
      {{Phase::edge, true}, {"Non-Ret", "Func", "T-Call", "Inst", "No-split", "J-Tab", "Other"}},
      {{Phase::nonret, false}, {"Lib", "Cond-NonRet", "Exit-Inst", "Fake-Ret", "Propa", "Other"}},
  };
  static const std::vector<std::string> other{"Other"};
  auto it = v.find({phase, fp});
  return it == v.end() ? other : it->second;
}

namespace {

class Attributor {
 public:
  Attributor(const Record& t, const Record& r, const BinaryImage* img)
      : truth_(t), result_(r), image_(img) {}

  std::optional<Instruction> decode(Addr a) const {
    if (!image_ || !image_->is_executable(a)) return std::nullopt;
    auto res = default_decoder().decode(image_->bytes_from(a), a, image_->mode);
    if (auto* i = std::get_if<Instruction>(&res)) return *i;
    return std::nullopt;
  }

  bool calls_truth_nonret(const Instruction& i) const {
    return i.flow == FlowKind::call_direct && truth_.nonret.count(*i.branch_target);
  }

  // a sits in a run of result instructions, linked by fallthrough, that
  // starts right after a call to a truly non-returning function.
  bool past_nonret_call(Addr a) const {
    Addr cur = a;
    for (int n = 0; n < 64; ++n) {
      auto it = result_.instructions.lower_bound(cur);
      if (it == result_.instructions.begin()) return false;
      --it;
      if (it->first + it->second.size != cur) return false;
      auto ins = decode(it->first);
      if (!ins) return false;
      if (calls_truth_nonret(*ins)) return true;
      if (ins->flow != FlowKind::fallthrough && ins->flow != FlowKind::cond_jump)
        return false;
      cur = it->first;
    }
    return false;
  }

  bool in_section(Addr a) const { return image_ && image_->section_at(a); }

  std::string inst_fp(Addr a) const {
    if (truth_.in_padding(a)) return "Pad";
    auto r = result_.instructions.find(a);
    const std::string& tag = r->second.tag;
    if (tag == "prologue_match" || tag == "gap_scan" || tag == "xref_seed") return "Func";
    if (past_nonret_call(a)) return "Non-Ret";
    for (const auto& [site, t] : result_.tables) {
      auto gt = truth_.tables.find(site);
      bool wrong = gt == truth_.tables.end() || table_targets(gt->second) != table_targets(t);
      Addr end = t.base + Addr(t.width) * t.targets.size();
      if (wrong && a >= t.base && a < end) return "Jump-Tbl";
    }
    if (!truth_.instruction_covering(a)) return "Data";
    return "Other";
  }

  std::string xref_fp(const Item& x) const {
    XrefKind k = XrefKind(x[2]);
    bool from_data = k == XrefKind::d2c || k == XrefKind::d2d;
    const Xref* self = nullptr;
    for (const auto& r : result_.xrefs)
      if (r.from == x[0] && r.to == x[1] && r.kind == k) self = &r;
    unsigned w = self ? self->width : 8;
    if (image_ && !in_section(x[1])) return "Extended-data";
    if (from_data)
      for (const auto& g : truth_.xrefs) {
        bool gdata = g.kind == XrefKind::d2c || g.kind == XrefKind::d2d;
        if (gdata && g.from != x[0] && g.from < x[0] + w && x[0] < g.from + g.width)
          return "Type-based Sliding";
      }
    if (from_data && w && x[0] % w) return "Align";
    if (in_section(x[1])) return "Collision";
    return "Other";
  }

  std::string xref_fn(const Item& x) const {
    XrefKind k = XrefKind(x[2]);
    bool from_data = k == XrefKind::d2c || k == XrefKind::d2d;
    std::set<std::string> reasons;
    for (const auto& j : result_.rejects)
      if (j.from == x[0] && j.value == x[1]) reasons.insert(j.reason);
    if (reasons.count("float_typed") || reasons.count("string_overlap")) return "Type";
    if (reasons.count("table_size")) return "Address Table";
    if (reasons.count("not_entry")) return "Func";
    if (!from_data && !result_.instructions.count(x[0])) return "Func";
    if (image_ && !in_section(x[1])) return "Extended-data";
    unsigned w = 8;
    for (const auto& g : truth_.xrefs)
      if (g.from == x[0] && g.to == x[1]) w = g.width;
    if (from_data && w && x[0] % w) return "Align";
    return "Other";
  }

  bool is_gt_table_target(Addr a) const {
    for (const auto& [s, t] : truth_.tables)
      if (std::find(t.targets.begin(), t.targets.end(), a) != t.targets.end()) return true;
    return false;
  }

  std::string func_fp(Addr a) const {
    if (!truth_.instructions.count(a)) return "Mis-disa";
    if (is_gt_table_target(a)) return "J-Tab";
    const std::string& tag = result_.functions.at(a);
    if (tag == "tail_call_target") return "T-Call";
    if (tag == "scan_begin") return "Scan";
    if (tag == "prologue") return "Mismatch";
    return "Other";
  }

  // Previous truth instruction before a, skipping padding.
  std::optional<Addr> truth_pred(Addr a) const {
    Addr cur = a;
    for (int n = 0; n < 64; ++n) {
      auto it = truth_.padding.upper_bound(cur - 1);
      if (it != truth_.padding.begin()) {
        auto p = std::prev(it);
        if (p->first + p->second == cur) {
          cur = p->first;
          continue;
        }
      }
      auto ii = truth_.instructions.lower_bound(cur);
      if (ii == truth_.instructions.begin()) return std::nullopt;
      --ii;
      if (ii->first + ii->second.size != cur) return std::nullopt;
      return ii->first;
    }
    return std::nullopt;
  }

  std::string func_fn(Addr a) const {
    for (const auto& [s, t] : truth_.tables) {
      if (std::find(t.targets.begin(), t.targets.end(), a) == t.targets.end()) continue;
      auto r = result_.tables.find(s);
      if (r == result_.tables.end() || table_targets(r->second) != table_targets(t))
        return "J-Tab";
    }
    for (const auto& tc : truth_.tail_calls)
      if (tc.second == a && !result_.tail_calls.count(tc)) return "T-Call";
    auto cov = result_.instructions.upper_bound(a);
    if (cov != result_.instructions.begin()) {
      --cov;
      if (cov->first < a && a < cov->first + cov->second.size) return "FP-Overlap";
    }
    if (!result_.instructions.count(a)) {
      if (auto p = truth_pred(a))
        if (auto ins = decode(*p); ins && calls_truth_nonret(*ins)) return "Non-Ret";
      return "No-Match";
    }
    return "Other";
  }

  bool truth_block_start(Addr a) const {
    if (truth_.functions.count(a)) return true;
    for (const auto& [x, y] : truth_.edges)
      if (x == a || y == a) return true;
    return false;
  }

  std::string edge_fp(const Item& e) const {
    Addr a = e[0], b = e[1];
    if (!truth_.instructions.count(a) || !truth_.instructions.count(b)) return "Inst";
    if (past_nonret_call(a) || past_nonret_call(b)) return "Non-Ret";
    for (const auto& tc : truth_.tail_calls)
      if (tc.second == b) return "T-Call";
    if (truth_.functions.count(b)) return "Func";
    for (const auto& [s, t] : result_.tables)
      if (std::find(t.targets.begin(), t.targets.end(), b) != t.targets.end()) return "J-Tab";
    if (!truth_block_start(a) || !truth_block_start(b)) return "No-split";
    return "Other";
  }

  std::vector<Instruction> truth_body(Addr f) const {
    std::vector<Instruction> out;
    auto next = truth_.functions.upper_bound(f);
    Addr end = next == truth_.functions.end() ? ~Addr(0) : next->first;
    for (auto it = truth_.instructions.lower_bound(f);
         it != truth_.instructions.end() && it->first < end; ++it)
      if (auto ins = decode(it->first)) out.push_back(*ins);
    return out;
  }

  std::string nonret_fn(Addr f) const {
    if (image_) {
      const Section* s = image_->section_at(f);
      if (s && s->name.rfind(".plt", 0) == 0) return "Lib";
      for (const auto& sym : image_->symbols)
        if (sym.vaddr == f && sym.source == SymbolSource::dynsym) return "Lib";
    }
    auto body = truth_body(f);
    bool has_halt = false, has_ret = false, calls_missing = false, calls_found = false;
    for (const auto& i : body) {
      if (i.flow == FlowKind::halt || i.text.rfind("syscall", 0) == 0) has_halt = true;
      if (i.flow == FlowKind::ret) has_ret = true;
      if (calls_truth_nonret(i)) {
        if (result_.nonret.count(*i.branch_target))
          calls_found = true;
        else
          calls_missing = true;
      }
    }
    if (has_halt) return "Exit-Inst";
    if (has_ret) return "Fake-Ret";
    if (calls_missing) return "Propa";
    if (calls_found) return "Cond-NonRet";
    return "Other";
  }

 private:
  const Record& truth_;
  const Record& result_;
  const BinaryImage* image_;
};

}  // namespace

std::vector<ErrorAttribution> attribute_errors(const Record& truth, const Record& result,
                                               Phase phase, const BinaryImage* image) {
  PhaseItems items = phase_items(truth, result, phase);
  Attributor at(truth, result, image);
  std::vector<ErrorAttribution> out;
  auto add = [&](bool fp, const Item& x, std::string cause) {
    out.push_back({phase, fp, x, std::move(cause)});
  };
  if (phase == Phase::jtab) {
    for (const Item& s : items.result) {
      bool ok = items.truth.count(s) &&
                table_targets(truth.tables.at(s[0])) == table_targets(result.tables.at(s[0]));
      if (!ok) add(true, s, "Other");
    }
    for (const Item& s : items.truth) {
      bool ok = items.result.count(s) &&
                table_targets(truth.tables.at(s[0])) == table_targets(result.tables.at(s[0]));
      if (!ok) add(false, s, "Other");
    }
    return out;
  }
  for (const Item& x : items.result) {
    if (items.truth.count(x)) continue;
    switch (phase) {
      case Phase::inst: add(true, x, at.inst_fp(x[0])); break;
      case Phase::xref: add(true, x, at.xref_fp(x)); break;
      case Phase::func: add(true, x, at.func_fp(x[0])); break;
      case Phase::edge: add(true, x, at.edge_fp(x)); break;
      default: add(true, x, "Other"); break;
    }
  }
  for (const Item& x : items.truth) {
    if (items.result.count(x)) continue;
    switch (phase) {
      case Phase::xref: add(false, x, at.xref_fn(x)); break;
      case Phase::func: add(false, x, at.func_fn(x[0])); break;
      case Phase::nonret: add(false, x, at.nonret_fn(x[0])); break;
      default: add(false, x, "Other"); break;
    }
  }
  return out;
}

std::string format_item(Phase phase, const Item& x) {
  std::ostringstream os;
  os << std::hex;
  switch (phase) {
    case Phase::xref:
      os << to_string(XrefKind(x[2])) << ' ' << x[0] << ' ' << x[1];
      break;
    case Phase::edge:
    case Phase::cg:
      os << x[0] << ' ' << x[1];
      break;
    default:
      os << x[0];
  }
  return os.str();
}

}  // namespace dislab
