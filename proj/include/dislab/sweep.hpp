#pragma once

#include <map>
#include <optional>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/decode.hpp"
#include "dislab/image.hpp"

namespace dislab {

enum class SweepCause { bad_opcode, invalid_transfer };

struct SweepError {
  Addr vaddr = 0;
  SweepCause cause = SweepCause::bad_opcode;
  bool repaired = false;
  Addr source = 0;  // branch site for invalid_transfer
};

struct SweepResult {
  std::map<Addr, Instruction> instructions;
  std::vector<SweepError> errors;  // sorted by (vaddr, cause)
  std::vector<Range> excluded;
  std::vector<Range> patched;  // padding spans substituted by psi_repair
};

SweepResult linear_sweep(const BinaryImage& image,
                         const std::vector<Range>& ranges, SweepPolicy policy,
                         const Decoder& dec = default_decoder());

struct PsiRepair {
  Range padding;
  Addr resweep_from = 0;
};

// Declined repairs yield nullopt.
std::optional<PsiRepair> psi_repair(const BinaryImage& image,
                                    const SweepError& error,
                                    const SweepResult& prior);

// Length of the padding element at the front of bytes, or 0.
std::size_t padding_element(std::span<const std::uint8_t> bytes);

std::optional<Range> detect_padding(const BinaryImage& image, Addr vaddr);

// Direct branch targets in `insns` that land inside another instruction
// or in undecoded bytes of an executable section.
std::vector<SweepError> invalid_transfers(
    const BinaryImage& image, const std::map<Addr, Instruction>& insns);

}  // namespace dislab
