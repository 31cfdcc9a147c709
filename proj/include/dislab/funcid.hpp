#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/decode.hpp"
#include "dislab/image.hpp"

namespace dislab {

struct DisasmResult;

// Listed strongest first; collisions keep the lowest value.
enum class EntrySource {
  symbol, eh_frame, main_arg, main_pattern, call_target, tail_call_target,
  prologue, scan_begin
};

const char* to_string(EntrySource s);
std::optional<EntrySource> entry_source_from(std::string_view s);

struct FunctionEntry {
  Addr vaddr = 0;
  EntrySource source = EntrySource::symbol;

  bool operator==(const FunctionEntry&) const = default;
};

// The call in _start that hands control to the libc startup routine.
std::optional<Instruction> startup_call(const BinaryImage& image,
                                        const DisasmResult* result,
                                        const Decoder& dec = default_decoder());

std::optional<Addr> find_main(const BinaryImage& image,
                              const DisasmResult* result, MainMethod method,
                              const Decoder& dec = default_decoder());

class EhFrameError : public std::runtime_error {
 public:
  EhFrameError(std::uint64_t offset, const std::string& msg);
  std::uint64_t offset;  // record offset within the section
};

std::vector<Addr> eh_frame_entries(const BinaryImage& image);
// Parses raw .eh_frame bytes located at section_vaddr.
std::vector<Addr> parse_eh_frame(std::span<const std::uint8_t> bytes,
                                 Addr section_vaddr, Mode mode);

bool prologue_at(const BinaryImage& image, Addr a, PrologueSet set,
                 Addr limit, const Decoder& dec = default_decoder());

std::vector<Addr> match_prologues(const BinaryImage& image,
                                  const std::vector<Range>& gaps,
                                  PrologueSet set,
                                  const Decoder& dec = default_decoder());

// Facts produced by other phases that name function entries.
struct EntryEvidence {
  std::optional<Addr> main;
  std::vector<Addr> eh_frame;
  std::vector<Addr> indirect_call_targets;
  std::vector<Addr> tail_call_targets;
};

std::vector<FunctionEntry> collect_entries(const BinaryImage& image,
                                           const DisasmResult& result,
                                           const EntryEvidence& evidence,
                                           const StrategyConfig& config);

}  // namespace dislab
