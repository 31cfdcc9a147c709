#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dislab {

using Addr = std::uint64_t;

struct Range {
  Addr start = 0;
  std::uint64_t size = 0;

  Addr end() const { return start + size; }
  bool contains(Addr a) const { return a >= start && a < start + size; }
  bool operator==(const Range&) const = default;
  auto operator<=>(const Range&) const = default;
};

enum class Mode { x86, x64 };

inline unsigned machine_size(Mode m) { return m == Mode::x64 ? 8 : 4; }

enum class SectionKind { code, data, other };

struct Section {
  std::string name;
  Addr vaddr = 0;
  std::uint64_t size = 0;
  std::vector<std::uint8_t> bytes;
  SectionKind kind = SectionKind::other;
  bool executable = false;

  Addr end() const { return vaddr + size; }
  bool contains(Addr a) const { return a >= vaddr && a < vaddr + size; }
};

enum class SymbolSource { symtab, dynsym };

struct SymbolEntry {
  std::string name;
  Addr vaddr = 0;
  std::uint64_t size = 0;
  bool is_function = false;
  SymbolSource source = SymbolSource::symtab;
};

// Raised for malformed containers. field() names the header field or
// directive that could not be accepted.
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string field, const std::string& msg)
      : std::runtime_error(msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class UnsupportedArchitecture : public LoadError {
 public:
  using LoadError::LoadError;
};

class BinaryImage {
 public:
  std::string path;
  Mode mode = Mode::x64;
  std::vector<Section> sections;  // sorted by vaddr
  std::vector<SymbolEntry> symbols;
  Addr entry_point = 0;

  const Section* section_at(Addr a) const;
  bool is_executable(Addr a) const;
  bool is_data(Addr a) const;  // non-executable loaded section

  // Bytes from a to the end of its section, or empty if unmapped.
  std::span<const std::uint8_t> bytes_from(Addr a) const;
  std::optional<std::uint64_t> read_uint(Addr a, unsigned width) const;

  const SymbolEntry* symbol_named(std::string_view name) const;
  const SymbolEntry* function_at(Addr a) const;

  // Sorts sections and enforces the structural invariants.
  void validate();
};

BinaryImage load_binary(const std::string& path);
BinaryImage load_binary_bytes(std::span<const std::uint8_t> data,
                              const std::string& path = "<memory>");
BinaryImage parse_fixture(std::string_view text,
                          const std::string& path = "<memory>");

// Symbol ranges (address order) followed by gaps (address order).
// Overlapping symbol ranges are trimmed so the output stays a partition;
// the starts of trimmed symbols are appended to *overlaps when given.
std::vector<Range> code_regions(const BinaryImage& image,
                                std::vector<Addr>* overlaps = nullptr);

std::vector<Addr> symbol_seeds(const BinaryImage& image);

}  // namespace dislab
