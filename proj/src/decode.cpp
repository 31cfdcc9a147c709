#include "dislab/decode.hpp"

#include <capstone/capstone.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <sstream>
#include <string_view>

namespace dislab {

const char* to_string(FlowKind k) {
  switch (k) {
    case FlowKind::fallthrough: return "fallthrough";
    case FlowKind::call_direct: return "call_direct";
    case FlowKind::call_indirect: return "call_indirect";
    case FlowKind::jump_direct: return "jump_direct";
    case FlowKind::jump_indirect: return "jump_indirect";
    case FlowKind::cond_jump: return "cond_jump";
    case FlowKind::ret: return "ret";
    case FlowKind::halt: return "halt";
  }
  return "?";
}

const char* to_string(Reg r) {
  static const char* names[] = {"none", "ax",  "cx",  "dx",  "bx",
                                "sp",   "bp",  "si",  "di",  "r8",
                                "r9",   "r10", "r11", "r12", "r13",
                                "r14",  "r15", "ip",  "other"};
  return names[unsigned(r)];
}

AddressError::AddressError(Addr a)
    : std::runtime_error([a] {
        std::ostringstream os;
        os << "address 0x" << std::hex << a << " is not mapped";
        return os.str();
      }()),
      vaddr(a) {}

std::optional<Addr> Instruction::memory_address() const {
  for (const auto& o : operands) {
    if (o.kind != OperandKind::mem) continue;
    const MemExpr& m = o.mem;
    if (m.segment || m.index != Reg::none) return std::nullopt;
    if (m.base == Reg::none) return Addr(m.displacement);
    if (m.base == Reg::ip) return Addr(std::int64_t(end()) + m.displacement);
    return std::nullopt;
  }
  return std::nullopt;
}

namespace {

Reg family_from_name(std::string_view n) {
  static const std::map<std::string_view, Reg> table = [] {
    std::map<std::string_view, Reg> t;
    auto add = [&](Reg r, std::initializer_list<std::string_view> names) {
      for (auto s : names) t[s] = r;
    };
    add(Reg::ax, {"rax", "eax", "ax", "al", "ah"});
    add(Reg::cx, {"rcx", "ecx", "cx", "cl", "ch"});
    add(Reg::dx, {"rdx", "edx", "dx", "dl", "dh"});
    add(Reg::bx, {"rbx", "ebx", "bx", "bl", "bh"});
    add(Reg::sp, {"rsp", "esp", "sp", "spl"});
    add(Reg::bp, {"rbp", "ebp", "bp", "bpl"});
    add(Reg::si, {"rsi", "esi", "si", "sil"});
    add(Reg::di, {"rdi", "edi", "di", "dil"});
    add(Reg::ip, {"rip", "eip", "ip"});
    return t;
  }();
  if (auto it = table.find(n); it != table.end()) return it->second;
  if (n.size() >= 2 && n[0] == 'r' && n[1] >= '0' && n[1] <= '9') {
    int num = 0;
    std::size_t i = 1;
    while (i < n.size() && n[i] >= '0' && n[i] <= '9') num = num * 10 + (n[i++] - '0');
    std::string_view suf = n.substr(i);
    if (num >= 8 && num <= 15 &&
        (suf.empty() || suf == "d" || suf == "w" || suf == "b"))
      return Reg(unsigned(Reg::r8) + (num - 8));
  }
  return Reg::other;
}

struct Classes {
  Op op = Op::other;
  Cond cond = Cond::none;
};

Classes op_class(unsigned id) {
  switch (id) {
    case X86_INS_MOV: case X86_INS_MOVABS: return {Op::mov};
    case X86_INS_MOVZX: return {Op::movzx};
    case X86_INS_MOVSX: case X86_INS_MOVSXD: return {Op::movsx};
    case X86_INS_LEA: return {Op::lea};
    case X86_INS_ADD: return {Op::add};
    case X86_INS_SUB: return {Op::sub};
    case X86_INS_AND: return {Op::and_};
    case X86_INS_OR: return {Op::or_};
    case X86_INS_XOR: return {Op::xor_};
    case X86_INS_CMP: return {Op::cmp};
    case X86_INS_TEST: return {Op::test};
    case X86_INS_PUSH: return {Op::push};
    case X86_INS_POP: return {Op::pop};
    case X86_INS_LEAVE: return {Op::leave};
    case X86_INS_CALL: case X86_INS_LCALL: return {Op::call};
    case X86_INS_JMP: case X86_INS_LJMP: return {Op::jmp};
    case X86_INS_RET: case X86_INS_RETF: case X86_INS_RETFQ:
    case X86_INS_IRET: case X86_INS_IRETD: case X86_INS_IRETQ:
      return {Op::ret};
    case X86_INS_HLT: return {Op::hlt};
    case X86_INS_UD2: return {Op::ud2};
    case X86_INS_NOP: return {Op::nop};
    case X86_INS_INC: return {Op::inc};
    case X86_INS_DEC: return {Op::dec};
    case X86_INS_SHL: case X86_INS_SAL: return {Op::shl};
    case X86_INS_SHR: return {Op::shr};
    case X86_INS_SAR: return {Op::sar};
    case X86_INS_INT3: return {Op::int3};
    case X86_INS_ENDBR64: case X86_INS_ENDBR32: return {Op::endbr};
    case X86_INS_JO: return {Op::jcc, Cond::o};
    case X86_INS_JNO: return {Op::jcc, Cond::no};
    case X86_INS_JB: return {Op::jcc, Cond::b};
    case X86_INS_JAE: return {Op::jcc, Cond::ae};
    case X86_INS_JE: return {Op::jcc, Cond::e};
    case X86_INS_JNE: return {Op::jcc, Cond::ne};
    case X86_INS_JBE: return {Op::jcc, Cond::be};
    case X86_INS_JA: return {Op::jcc, Cond::a};
    case X86_INS_JS: return {Op::jcc, Cond::s};
    case X86_INS_JNS: return {Op::jcc, Cond::ns};
    case X86_INS_JP: return {Op::jcc, Cond::p};
    case X86_INS_JNP: return {Op::jcc, Cond::np};
    case X86_INS_JL: return {Op::jcc, Cond::l};
    case X86_INS_JGE: return {Op::jcc, Cond::ge};
    case X86_INS_JLE: return {Op::jcc, Cond::le};
    case X86_INS_JG: return {Op::jcc, Cond::g};
    case X86_INS_JCXZ: case X86_INS_JECXZ: case X86_INS_JRCXZ:
    case X86_INS_LOOP: case X86_INS_LOOPE: case X86_INS_LOOPNE:
      return {Op::jcc, Cond::loop};
    default: return {};
  }
}

bool float_mnemonic(std::string_view n) {
  if (n.size() < 3 || n[0] == 'p') return false;
  auto suf = n.substr(n.size() - 2);
  return suf == "ss" || suf == "sd" || suf == "ps" || suf == "pd";
}

std::uint64_t mask_to(std::uint64_t v, unsigned size) {
  return size >= 8 ? v : v & ((std::uint64_t(1) << (8 * size)) - 1);
}

}  // namespace

CapstoneDecoder::CapstoneDecoder() {
  const cs_mode modes[2] = {CS_MODE_32, CS_MODE_64};
  for (int i = 0; i < 2; ++i) {
    csh h;
    if (cs_open(CS_ARCH_X86, modes[i], &h) != CS_ERR_OK)
      throw std::runtime_error("capstone: cs_open failed");
    cs_option(h, CS_OPT_SYNTAX, CS_OPT_SYNTAX_ATT);
    cs_option(h, CS_OPT_DETAIL, CS_OPT_ON);
    handles_[i] = h;
    insn_[i] = cs_malloc(h);
  }
}

CapstoneDecoder::~CapstoneDecoder() {
  for (int i = 0; i < 2; ++i) {
    if (insn_[i]) cs_free(static_cast<cs_insn*>(insn_[i]), 1);
    csh h = handles_[i];
    cs_close(&h);
  }
}

DecodeResult CapstoneDecoder::decode(std::span<const std::uint8_t> bytes,
                                     Addr vaddr, Mode mode) const {
  if (bytes.empty()) return InvalidOpcode{vaddr, 0};
  int mi = mode == Mode::x64 ? 1 : 0;
  csh h = handles_[mi];
  auto* insn = static_cast<cs_insn*>(insn_[mi]);
  const std::uint8_t* code = bytes.data();
  std::size_t size = std::min<std::size_t>(bytes.size(), 15);
  std::uint64_t addr = vaddr;
  if (!cs_disasm_iter(h, &code, &size, &addr, insn))
    return InvalidOpcode{vaddr, bytes[0]};

  Instruction out;
  out.vaddr = vaddr;
  out.length = std::uint8_t(insn->size);
  out.first_byte = bytes[0];
  out.text = insn->mnemonic;
  if (insn->op_str[0]) {
    out.text += ' ';
    out.text += insn->op_str;
  }
  auto cls = op_class(insn->id);
  out.op = cls.op;
  out.cond = cls.cond;
  const char* iname = cs_insn_name(h, insn->id);
  const cs_detail* det = insn->detail;
  for (unsigned g = 0; g < det->groups_count; ++g)
    if (det->groups[g] == X86_GRP_FPU) out.is_float = true;
  if (iname && float_mnemonic(iname)) out.is_float = true;

  const cs_x86& x = det->x86;
  for (int i = x.op_count - 1; i >= 0; --i) {  // AT&T order is source first
    const cs_x86_op& o = x.operands[i];
    Operand op;
    op.size = o.size;
    if (o.type == X86_OP_REG) {
      op.kind = OperandKind::reg;
      std::string_view n = cs_reg_name(h, o.reg);
      op.reg = family_from_name(n);
      op.vector_reg = op.reg == Reg::other;
    } else if (o.type == X86_OP_IMM) {
      op.kind = OperandKind::imm;
      op.imm = o.imm;
    } else if (o.type == X86_OP_MEM) {
      op.kind = OperandKind::mem;
      if (o.mem.base != X86_REG_INVALID)
        op.mem.base = family_from_name(cs_reg_name(h, o.mem.base));
      if (o.mem.index != X86_REG_INVALID)
        op.mem.index = family_from_name(cs_reg_name(h, o.mem.index));
      op.mem.scale = std::uint8_t(o.mem.scale);
      op.mem.displacement = o.mem.disp;
      op.mem.segment = o.mem.segment == X86_REG_FS || o.mem.segment == X86_REG_GS;
    }
    out.operands.push_back(op);
  }

  cs_regs rr, rw;
  std::uint8_t nr = 0, nw = 0;
  if (cs_regs_access(h, insn, rr, &nr, rw, &nw) == CS_ERR_OK) {
    for (unsigned i = 0; i < nw; ++i) {
      Reg r = family_from_name(cs_reg_name(h, rw[i]));
      if (r != Reg::other && r != Reg::none) out.regs_written |= 1u << unsigned(r);
    }
  }

  out.flow = classify(out);
  unsigned asize = mode == Mode::x64 ? 8 : 4;
  if (out.flow == FlowKind::call_direct || out.flow == FlowKind::jump_direct ||
      out.flow == FlowKind::cond_jump) {
    out.branch_target = mask_to(std::uint64_t(out.operands.at(0).imm), asize);
  }

  for (std::size_t i = 0; i < out.operands.size(); ++i) {
    const Operand& o = out.operands[i];
    if (o.kind == OperandKind::imm && !out.branch_target) {
      unsigned w = x.encoding.imm_size ? x.encoding.imm_size : o.size;
      out.const_operands.push_back(
          {mask_to(std::uint64_t(o.imm), o.size ? o.size : asize),
           std::uint8_t(i), std::uint8_t(w)});
    } else if (o.kind == OperandKind::mem && !o.mem.segment) {
      std::uint64_t v;
      if (o.mem.base == Reg::ip)
        v = std::uint64_t(std::int64_t(out.end()) + o.mem.displacement);
      else if (o.mem.displacement != 0)
        v = std::uint64_t(o.mem.displacement);
      else
        continue;
      out.const_operands.push_back(
          {mask_to(v, asize), std::uint8_t(i),
           std::uint8_t(x.encoding.disp_size ? x.encoding.disp_size : asize)});
    }
    if (o.kind == OperandKind::mem && out.op != Op::lea && out.op != Op::nop &&
        !out.reads_memory)
      out.reads_memory = o.mem;
  }
  return out;
}

const Decoder& default_decoder() {
  thread_local CapstoneDecoder dec;
  return dec;
}

DecodeResult decode_at(const BinaryImage& image, Addr vaddr, Mode mode,
                       const Decoder& dec) {
  auto b = image.bytes_from(vaddr);
  if (b.empty()) throw AddressError(vaddr);
  return dec.decode(b, vaddr, mode);
}

FlowKind classify(const Instruction& instr) {
  bool imm_target = !instr.operands.empty() &&
                    instr.operands[0].kind == OperandKind::imm;
  switch (instr.op) {
    case Op::ret: return FlowKind::ret;
    case Op::hlt: case Op::ud2: return FlowKind::halt;
    case Op::call:
      return imm_target ? FlowKind::call_direct : FlowKind::call_indirect;
    case Op::jmp:
      return imm_target ? FlowKind::jump_direct : FlowKind::jump_indirect;
    case Op::jcc: return FlowKind::cond_jump;
    default: return FlowKind::fallthrough;
  }
}

}  // namespace dislab
