#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dislab/image.hpp"
#include "dislab/symbolize.hpp"

namespace dislab {

struct AnalysisResult;

enum class Phase { inst, xref, func, edge, cg, tailcall, nonret, jtab };
const std::vector<Phase>& all_phases();
const char* to_string(Phase p);
std::optional<Phase> phase_from(std::string_view s);

class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& msg);
  std::size_t line;
};

struct InstRecord {
  std::uint64_t size = 0;
  std::string tag;  // provenance, result files only
  bool operator==(const InstRecord&) const = default;
};

struct TableRecord {
  Addr site = 0;
  Addr base = 0;
  unsigned width = 0;
  std::vector<Addr> targets;
  bool operator==(const TableRecord&) const = default;
};

struct RejectRecord {
  Addr from = 0;
  std::uint64_t value = 0;
  std::string reason;
  auto key() const { return std::tie(from, value, reason); }
  bool operator<(const RejectRecord& o) const { return key() < o.key(); }
  bool operator==(const RejectRecord& o) const { return key() == o.key(); }
};

// Ground truth and analysis output share this model and its text form.
struct Record {
  std::vector<std::pair<std::string, std::string>> config;  // header echo
  std::optional<std::set<Phase>> phases;  // absent: every phase present
  std::optional<Addr> main;
  std::map<Addr, InstRecord> instructions;
  std::map<Addr, std::uint64_t> padding;
  std::map<Addr, std::string> functions;  // entry -> source tag
  std::set<Xref> xrefs;
  std::map<Addr, TableRecord> tables;           // by site
  std::map<Addr, std::string> unresolved_tables;  // site -> reason
  std::set<std::pair<Addr, Addr>> edges;
  std::set<std::pair<Addr, Addr>> call_graph;  // (caller, callee)
  std::set<std::pair<Addr, Addr>> tail_calls;  // (site, target)
  std::set<Addr> nonret;
  std::set<RejectRecord> rejects;

  bool has_phase(Phase p) const { return !phases || phases->count(p); }
  // GT instruction covering a, if any.
  const std::pair<const Addr, InstRecord>* instruction_covering(Addr a) const;
  bool in_padding(Addr a) const;
};

Record parse_record(std::string_view text);
Record load_record(const std::string& path);
std::string emit_record(const Record& r);

Record to_record(const AnalysisResult& result);

}  // namespace dislab
