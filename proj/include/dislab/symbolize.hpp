#pragma once

#include <set>
#include <tuple>
#include <variant>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/image.hpp"

namespace dislab {

struct DisasmResult;

enum class XrefKind { c2c, c2d, d2c, d2d };
enum class XrefOrigin { operand, data_unit, address_table };

const char* to_string(XrefKind k);
std::optional<XrefKind> xref_kind_from(std::string_view s);
const char* to_string(XrefOrigin o);

struct Xref {
  Addr from = 0;
  Addr to = 0;
  XrefKind kind = XrefKind::c2c;
  std::uint8_t width = 0;
  XrefOrigin origin = XrefOrigin::operand;

  auto key() const { return std::tuple(from, to, kind); }
  bool operator<(const Xref& o) const { return key() < o.key(); }
  bool operator==(const Xref& o) const { return key() == o.key(); }
};

enum class CandidateOrigin { operand, data_unit };

struct Candidate {
  Addr from = 0;
  std::uint64_t value = 0;
  std::uint8_t width = 0;
  bool aligned = true;
  CandidateOrigin origin = CandidateOrigin::operand;

  auto key() const { return std::tuple(from, value, width, origin); }
  bool operator<(const Candidate& o) const { return key() < o.key(); }
  bool operator==(const Candidate& o) const { return key() == o.key(); }
};

enum class RejectReason {
  too_small, magic_value, not_entry, out_of_region, float_typed,
  string_overlap, table_size, overlapping_pointer
};
const char* to_string(RejectReason r);

struct Rejection {
  Candidate candidate;
  RejectReason reason = RejectReason::out_of_region;
};

struct AddressTable {
  Addr start = 0;
  std::vector<Addr> entries;
  std::uint8_t entry_width = 0;
};

enum class TypeKind { float_, string, pointer, arithmetic_seq };
const char* to_string(TypeKind k);

struct InferredType {
  Addr vaddr = 0;
  TypeKind kind = TypeKind::string;
  std::uint64_t extent = 0;
};

// What is known about functions when symbolizing.
struct SymbolContext {
  std::set<Addr> entries;
  std::set<Addr> owned;  // instruction starts inside known functions
};

struct SymbolizationResult {
  std::vector<Xref> xrefs;  // sorted, unique by (from, to, kind)
  std::vector<AddressTable> tables;
  std::vector<Rejection> rejections;
  std::vector<InferredType> types;
};

std::vector<Candidate> extract_candidates(const BinaryImage& image,
                                          const DisasmResult& result,
                                          const StrategyConfig& config);

std::variant<Xref, Rejection> classify_candidate(const Candidate& cand,
                                                 const BinaryImage& image,
                                                 const DisasmResult& result,
                                                 const StrategyConfig& config,
                                                 const SymbolContext& ctx = {});

std::vector<InferredType> infer_types(const BinaryImage& image,
                                      const DisasmResult& result,
                                      const StrategyConfig& config);

// Length of an ASCII or UTF-16LE string at the front of bytes including
// its terminator, or 0.
std::size_t string_extent(std::span<const std::uint8_t> bytes);

struct TableScan {
  std::vector<AddressTable> tables;
  std::vector<Xref> xrefs;
  std::vector<Rejection> rejections;
};

TableScan scan_address_tables(const BinaryImage& image,
                              const DisasmResult& result,
                              const StrategyConfig& config,
                              const SymbolContext& ctx = {});

SymbolizationResult symbolize(const BinaryImage& image,
                              const DisasmResult& result,
                              const StrategyConfig& config,
                              const SymbolContext& ctx = {});

// Constants that would point into undisassembled executable bytes; used to
// seed descent.
std::vector<Addr> gap_code_targets(const BinaryImage& image,
                                   const DisasmResult& result,
                                   const StrategyConfig& config);

}  // namespace dislab
