#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dislab/image.hpp"

namespace dislab {

enum class FlowKind {
  fallthrough,
  call_direct,
  call_indirect,
  jump_direct,
  jump_indirect,
  cond_jump,
  ret,
  halt
};

const char* to_string(FlowKind k);

inline bool is_call(FlowKind k) {
  return k == FlowKind::call_direct || k == FlowKind::call_indirect;
}
// Control never falls through to the next instruction.
inline bool ends_path(FlowKind k) {
  return k == FlowKind::jump_direct || k == FlowKind::jump_indirect ||
         k == FlowKind::ret || k == FlowKind::halt;
}

// Register families: all widths of one architectural register map to the
// same id (al/ax/eax/rax -> ax).
enum class Reg : std::uint8_t {
  none, ax, cx, dx, bx, sp, bp, si, di,
  r8, r9, r10, r11, r12, r13, r14, r15,
  ip, other
};
constexpr std::size_t kRegCount = 19;

const char* to_string(Reg r);

struct MemExpr {
  Reg base = Reg::none;
  Reg index = Reg::none;
  std::uint8_t scale = 1;
  std::int64_t displacement = 0;
  bool segment = false;  // fs/gs override: never a plain address

  bool operator==(const MemExpr&) const = default;
};

enum class OperandKind { reg, imm, mem };

struct Operand {
  OperandKind kind = OperandKind::reg;
  Reg reg = Reg::none;
  bool vector_reg = false;  // xmm/ymm/st
  std::int64_t imm = 0;
  MemExpr mem;
  std::uint8_t size = 0;
};

// Coarse opcode classes; enough for the dataflow used by the strategies.
enum class Op : std::uint8_t {
  other, mov, movzx, movsx, lea, add, sub, and_, or_, xor_, cmp, test,
  push, pop, leave, call, jmp, jcc, ret, hlt, ud2, nop, inc, dec, shl,
  shr, sar, int3, endbr
};

enum class Cond : std::uint8_t {
  none, o, no, b, ae, e, ne, be, a, s, ns, p, np, l, ge, le, g, loop
};

struct ConstOperand {
  std::uint64_t value = 0;
  std::uint8_t position = 0;  // operand index, destination first
  std::uint8_t size = 0;      // encoded width in bytes
};

struct Instruction {
  Addr vaddr = 0;
  std::uint8_t length = 0;
  std::string text;
  FlowKind flow = FlowKind::fallthrough;
  std::vector<ConstOperand> const_operands;
  std::optional<Addr> branch_target;
  std::optional<MemExpr> reads_memory;

  Op op = Op::other;
  Cond cond = Cond::none;
  std::vector<Operand> operands;  // destination first
  std::uint32_t regs_written = 0;  // bitmask over Reg
  bool is_float = false;
  std::uint8_t first_byte = 0;

  Addr end() const { return vaddr + length; }
  bool writes(Reg r) const { return regs_written & (1u << unsigned(r)); }
  // Absolute address named by the memory operand, if it has no register
  // component besides rip.
  std::optional<Addr> memory_address() const;
};

struct InvalidOpcode {
  Addr vaddr = 0;
  std::uint8_t byte = 0;
};

class AddressError : public std::runtime_error {
 public:
  explicit AddressError(Addr a);
  Addr vaddr;
};

using DecodeResult = std::variant<Instruction, InvalidOpcode>;

class Decoder {
 public:
  virtual ~Decoder() = default;
  // Decodes the instruction whose bytes start at bytes[0], located at vaddr.
  virtual DecodeResult decode(std::span<const std::uint8_t> bytes, Addr vaddr,
                              Mode mode) const = 0;
};

// Capstone-backed decoder, AT&T dialect. One instance per thread.
class CapstoneDecoder final : public Decoder {
 public:
  CapstoneDecoder();
  ~CapstoneDecoder() override;
  CapstoneDecoder(const CapstoneDecoder&) = delete;
  CapstoneDecoder& operator=(const CapstoneDecoder&) = delete;

  DecodeResult decode(std::span<const std::uint8_t> bytes, Addr vaddr,
                      Mode mode) const override;

 private:
  std::array<std::size_t, 2> handles_{};
  void* insn_[2] = {nullptr, nullptr};
};

const Decoder& default_decoder();

DecodeResult decode_at(const BinaryImage& image, Addr vaddr, Mode mode,
                       const Decoder& dec = default_decoder());

FlowKind classify(const Instruction& instr);

inline const Instruction* as_instruction(const DecodeResult& r) {
  return std::get_if<Instruction>(&r);
}

}  // namespace dislab
