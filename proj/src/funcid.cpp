#include "dislab/funcid.hpp"

#include <algorithm>
#include <map>

#include "dislab/recursive.hpp"

namespace dislab {

const char* to_string(EntrySource s) {
  switch (s) {
    case EntrySource::symbol: return "symbol";
    case EntrySource::eh_frame: return "eh_frame";
    case EntrySource::main_arg: return "main_arg";
    case EntrySource::main_pattern: return "main_pattern";
    case EntrySource::call_target: return "call_target";
    case EntrySource::tail_call_target: return "tail_call_target";
    case EntrySource::prologue: return "prologue";
    case EntrySource::scan_begin: return "scan_begin";
  }
  return "?";
}

std::optional<EntrySource> entry_source_from(std::string_view s) {
  for (int i = 0; i <= int(EntrySource::scan_begin); ++i)
    if (s == to_string(EntrySource(i))) return EntrySource(i);
  return std::nullopt;
}

namespace {

constexpr int kStartWalk = 64;

// Straight-line instructions from the entry point up to the first
// instruction that ends the path.
std::vector<Instruction> start_run(const BinaryImage& img,
                                   const DisasmResult* r, const Decoder& dec) {
  std::vector<Instruction> out;
  Addr a = img.entry_point;
  for (int i = 0; i < kStartWalk; ++i) {
    if (r) {
      if (const Instruction* ins = r->at(a)) {
        out.push_back(*ins);
        if (ends_path(ins->flow)) break;
        a = ins->end();
        continue;
      }
    }
    if (!img.is_executable(a)) break;
    auto res = dec.decode(img.bytes_from(a), a, img.mode);
    auto* ins = std::get_if<Instruction>(&res);
    if (!ins) break;
    out.push_back(*ins);
    if (ends_path(ins->flow)) break;
    a = ins->end();
  }
  return out;
}

bool names_startup(const BinaryImage& img, Addr target) {
  for (const auto& s : img.symbols)
    if (s.vaddr == target && s.name.rfind("__libc_start_main", 0) == 0)
      return true;
  return false;
}

std::optional<std::size_t> startup_index(const BinaryImage& img,
                                         const std::vector<Instruction>& run) {
  std::optional<std::size_t> last_call;
  for (std::size_t i = 0; i < run.size(); ++i) {
    const Instruction& ins = run[i];
    if (!is_call(ins.flow)) continue;
    std::optional<Addr> t = ins.branch_target;
    if (!t) t = ins.memory_address();
    if (t && names_startup(img, *t)) return i;
    last_call = i;
  }
  // Without a name, the call that is followed by hlt.
  if (last_call && *last_call + 1 < run.size() &&
      run[*last_call + 1].op == Op::hlt)
    return last_call;
  return std::nullopt;
}

// Constant held by register family r just before run[i].
std::optional<Addr> constant_in(const std::vector<Instruction>& run,
                                std::size_t i, Reg r) {
  while (i-- > 0) {
    const Instruction& ins = run[i];
    if (!ins.writes(r)) continue;
    if (ins.operands.size() != 2 || ins.operands[0].kind != OperandKind::reg ||
        ins.operands[0].reg != r)
      return std::nullopt;
    const Operand& src = ins.operands[1];
    if (ins.op == Op::mov && src.kind == OperandKind::imm)
      return Addr(ins.const_operands.front().value);
    if (ins.op == Op::lea && src.kind == OperandKind::mem)
      return ins.memory_address();
    if (ins.op == Op::mov && src.kind == OperandKind::reg) {
      r = src.reg;
      continue;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

std::optional<Instruction> startup_call(const BinaryImage& image,
                                        const DisasmResult* result,
                                        const Decoder& dec) {
  auto run = start_run(image, result, dec);
  auto i = startup_index(image, run);
  if (!i) return std::nullopt;
  return run[*i];
}

std::optional<Addr> find_main(const BinaryImage& image,
                              const DisasmResult* result, MainMethod method,
                              const Decoder& dec) {
  if (method == MainMethod::none) return std::nullopt;
  auto run = start_run(image, result, dec);
  auto idx = startup_index(image, run);
  if (!idx) return std::nullopt;
  const Instruction& call = run[*idx];
  std::optional<Addr> v;

  if (method == MainMethod::arg_propagation) {
    if (image.mode == Mode::x64) {
      v = constant_in(run, *idx, Reg::di);
    } else {
      for (std::size_t j = *idx; j-- > 0;) {
        const Instruction& ins = run[j];
        if (ins.op != Op::push) continue;
        const Operand& o = ins.operands.at(0);
        if (o.kind == OperandKind::imm)
          v = Addr(ins.const_operands.front().value);
        else if (o.kind == OperandKind::reg)
          v = constant_in(run, j, o.reg);
        break;
      }
    }
  } else {
    auto read32 = [&](Addr a) { return image.read_uint(a, 4); };
    auto bytes_at = [&](Addr a, std::initializer_list<std::uint8_t> pat) {
      auto b = image.bytes_from(a);
      return b.size() >= pat.size() &&
             std::equal(pat.begin(), pat.end(), b.begin());
    };
    Addr c = call.vaddr;
    if (image.mode == Mode::x64) {
      if (c >= 7 && bytes_at(c - 7, {0x48, 0xc7, 0xc7})) {
        if (auto x = read32(c - 4)) v = Addr(std::int64_t(std::int32_t(*x)));
      } else if (c >= 5 && bytes_at(c - 5, {0xbf}))
        v = read32(c - 4);
    } else if (c >= 5 && bytes_at(c - 5, {0x68})) {
      v = read32(c - 4);
    }
  }
  if (v && image.is_executable(*v)) return v;
  return std::nullopt;
}

bool prologue_at(const BinaryImage& image, Addr a, PrologueSet set, Addr limit,
                 const Decoder& dec) {
  auto next = [&](Addr p) -> std::optional<Instruction> {
    if (p >= limit || !image.is_executable(p)) return std::nullopt;
    auto res = dec.decode(image.bytes_from(p), p, image.mode);
    auto* ins = std::get_if<Instruction>(&res);
    if (!ins || ins->end() > limit) return std::nullopt;
    return *ins;
  };
  auto i1 = next(a);
  if (i1 && i1->op == Op::endbr) i1 = next(i1->end());
  if (!i1 || i1->op != Op::push || i1->operands.size() != 1 ||
      i1->operands[0].kind != OperandKind::reg)
    return false;
  auto i2 = next(i1->end());
  if (!i2 || i2->operands.size() != 2) return false;
  Reg pushed = i1->operands[0].reg;
  const Operand& dst = i2->operands[0];
  const Operand& src = i2->operands[1];
  unsigned word = machine_size(image.mode);
  bool gpr_dst = dst.kind == OperandKind::reg && dst.reg >= Reg::ax &&
                 dst.reg <= Reg::r15;
  bool gpr_src = src.kind == OperandKind::reg && src.reg >= Reg::ax &&
                 src.reg <= Reg::r15;
  bool frame = pushed == Reg::bp && i2->op == Op::mov && gpr_dst && gpr_src &&
               dst.reg == Reg::bp && src.reg == Reg::sp && dst.size == word;
  bool callee_saved = pushed == Reg::bx || pushed == Reg::bp ||
                      (pushed >= Reg::r12 && pushed <= Reg::r15);
  bool alloc = callee_saved && i2->op == Op::sub && gpr_dst &&
               dst.reg == Reg::sp && src.kind == OperandKind::imm;
  if (frame || alloc) return true;
  if (set == PrologueSet::aggressive)
    return pushed >= Reg::ax && pushed <= Reg::r15 && pushed != Reg::sp &&
           i2->op == Op::mov && gpr_dst && gpr_src;
  return false;
}

std::vector<Addr> match_prologues(const BinaryImage& image,
                                  const std::vector<Range>& gaps,
                                  PrologueSet set, const Decoder& dec) {
  std::vector<Addr> out;
  for (const auto& g : gaps)
    for (Addr a = g.start; a < g.end(); ++a)
      if (prologue_at(image, a, set, g.end(), dec)) out.push_back(a);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<FunctionEntry> collect_entries(const BinaryImage& image,
                                           const DisasmResult& result,
                                           const EntryEvidence& ev,
                                           const StrategyConfig& config) {
  std::map<Addr, EntrySource> best;
  auto add = [&](Addr a, EntrySource s) {
    if (!result.instructions.count(a)) return;
    auto [it, fresh] = best.emplace(a, s);
    if (!fresh && s < it->second) it->second = s;
  };
  add(image.entry_point, EntrySource::symbol);
  if (config.seed_symbols)
    for (const auto& s : image.symbols)
      if (s.is_function) add(s.vaddr, EntrySource::symbol);
  if (ev.main)
    add(*ev.main, config.main_method == MainMethod::byte_pattern
                      ? EntrySource::main_pattern
                      : EntrySource::main_arg);
  if (config.eh_frame)
    for (Addr a : ev.eh_frame) add(a, EntrySource::eh_frame);
  if (config.call_targets) {
    for (const auto& [a, ins] : result.instructions)
      if (ins.flow == FlowKind::call_direct)
        add(*ins.branch_target, EntrySource::call_target);
    for (Addr a : ev.indirect_call_targets) add(a, EntrySource::call_target);
  }
  for (Addr a : ev.tail_call_targets) add(a, EntrySource::tail_call_target);
  for (Addr a : result.prologue_hits) add(a, EntrySource::prologue);
  if (config.scan_begin)
    for (Addr a : result.scan_begins) add(a, EntrySource::scan_begin);
  std::vector<FunctionEntry> out;
  for (auto& [a, s] : best) out.push_back({a, s});
  return out;
}

}  // namespace dislab
