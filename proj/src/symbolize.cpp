#include "dislab/symbolize.hpp"

#include <algorithm>
#include <map>

#include "dislab/recursive.hpp"

namespace dislab {

const char* to_string(XrefKind k) {
  switch (k) {
    case XrefKind::c2c: return "c2c";
    case XrefKind::c2d: return "c2d";
    case XrefKind::d2c: return "d2c";
    case XrefKind::d2d: return "d2d";
  }
  return "?";
}

std::optional<XrefKind> xref_kind_from(std::string_view s) {
  for (int i = 0; i <= int(XrefKind::d2d); ++i)
    if (s == to_string(XrefKind(i))) return XrefKind(i);
  return std::nullopt;
}

const char* to_string(XrefOrigin o) {
  switch (o) {
    case XrefOrigin::operand: return "operand";
    case XrefOrigin::data_unit: return "data_unit";
    case XrefOrigin::address_table: return "address_table";
  }
  return "?";
}

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::too_small: return "too_small";
    case RejectReason::magic_value: return "magic_value";
    case RejectReason::not_entry: return "not_entry";
    case RejectReason::out_of_region: return "out_of_region";
    case RejectReason::float_typed: return "float_typed";
    case RejectReason::string_overlap: return "string_overlap";
    case RejectReason::table_size: return "table_size";
    case RejectReason::overlapping_pointer: return "overlapping_pointer";
  }
  return "?";
}

const char* to_string(TypeKind k) {
  switch (k) {
    case TypeKind::float_: return "float";
    case TypeKind::string: return "string";
    case TypeKind::pointer: return "pointer";
    case TypeKind::arithmetic_seq: return "arithmetic_seq";
  }
  return "?";
}

namespace {

// Regions scanned for data units.
std::vector<Range> unit_regions(const BinaryImage& image,
                                const DisasmResult& result,
                                const StrategyConfig& config) {
  std::vector<Range> out;
  for (const auto& s : image.sections)
    if (!s.executable && s.size) out.push_back({s.vaddr, s.size});
  if (config.scan_code_gaps)
    for (const Range& g : gap_regions(result, image)) out.push_back(g);
  std::sort(out.begin(), out.end());
  return out;
}

std::set<Addr> operand_values(const DisasmResult& result) {
  std::set<Addr> out;
  for (const auto& [a, ins] : result.instructions)
    for (const auto& c : ins.const_operands) out.insert(c.value);
  return out;
}

bool stride_allows(Addr a, unsigned word, Alignment al,
                   const std::set<Addr>& targeted) {
  switch (al) {
    case Alignment::machine: return a % word == 0;
    case Alignment::none: return true;
    case Alignment::four_unless_targeted: return a % 4 == 0 || targeted.count(a);
  }
  return false;
}

bool is_printable(std::uint8_t c) { return c >= 0x20 && c < 0x7f; }

bool overlaps(Addr a, std::uint64_t n, const std::vector<InferredType>& types,
              TypeKind kind) {
  for (const auto& t : types)
    if (t.kind == kind && a < t.vaddr + t.extent && t.vaddr < a + n) return true;
  return false;
}

XrefKind kind_of(bool from_code, bool to_code) {
  if (from_code) return to_code ? XrefKind::c2c : XrefKind::c2d;
  return to_code ? XrefKind::d2c : XrefKind::d2d;
}

}  // namespace

std::size_t string_extent(std::span<const std::uint8_t> b) {
  std::size_t n = 0;
  while (n < b.size() && is_printable(b[n])) ++n;
  if (n >= 2 && n < b.size() && b[n] == 0) return n + 1;
  std::size_t u = 0;
  while (2 * u + 1 < b.size() && is_printable(b[2 * u]) && b[2 * u + 1] == 0) ++u;
  if (u >= 2 && 2 * u + 1 < b.size() && b[2 * u] == 0 && b[2 * u + 1] == 0)
    return 2 * u + 2;
  return 0;
}

std::vector<Candidate> extract_candidates(const BinaryImage& image,
                                          const DisasmResult& result,
                                          const StrategyConfig& config) {
  std::vector<Candidate> out;
  for (const auto& [a, ins] : result.instructions)
    for (const auto& c : ins.const_operands)
      out.push_back({a, c.value, c.size, true, CandidateOrigin::operand});
  if (!config.data_units) return out;
  unsigned word = machine_size(image.mode);
  auto targeted = operand_values(result);
  for (const Range& r : unit_regions(image, result, config)) {
    for (Addr a = r.start; a + word <= r.end(); ++a) {
      if (!stride_allows(a, word, config.alignment, targeted)) continue;
      auto v = image.read_uint(a, word);
      if (!v) continue;
      out.push_back({a, *v, std::uint8_t(word), a % word == 0,
                     CandidateOrigin::data_unit});
    }
  }
  return out;
}

std::variant<Xref, Rejection> classify_candidate(const Candidate& cand,
                                                 const BinaryImage& image,
                                                 const DisasmResult& result,
                                                 const StrategyConfig& config,
                                                 const SymbolContext& ctx) {
  auto reject = [&](RejectReason r) { return Rejection{cand, r}; };
  Addr v = cand.value;
  if (v < config.min_value) return reject(RejectReason::too_small);
  if (std::find(config.magic_values.begin(), config.magic_values.end(), v) !=
      config.magic_values.end())
    return reject(RejectReason::magic_value);

  bool from_code = cand.origin == CandidateOrigin::operand;
  XrefOrigin origin = from_code ? XrefOrigin::operand : XrefOrigin::data_unit;
  if (result.instructions.count(v)) {
    if (config.code_entry_only && ctx.owned.count(v) && !ctx.entries.count(v))
      return reject(RejectReason::not_entry);
    return Xref{cand.from, v, kind_of(from_code, true), cand.width, origin};
  }
  std::uint64_t m = config.region_margin;
  for (const auto& s : image.sections) {
    if (s.executable) continue;
    Addr lo = s.vaddr > m ? s.vaddr - m : 0;
    if (v >= lo && v < s.end() + m)
      return Xref{cand.from, v, kind_of(from_code, false), cand.width, origin};
  }
  return reject(RejectReason::out_of_region);
}

std::vector<InferredType> infer_types(const BinaryImage& image,
                                      const DisasmResult& result,
                                      const StrategyConfig& config) {
  (void)config;
  std::vector<InferredType> found;

  // Floats: loads whose value reaches a floating-point instruction within
  // the same block.
  for (const auto& b : result.blocks) {
    std::map<Reg, std::pair<Addr, std::uint8_t>> loaded;
    for (auto it = result.instructions.lower_bound(b.start);
         it != result.instructions.end() && it->first < b.end; ++it) {
      const Instruction& ins = it->second;
      bool vec_dst = !ins.operands.empty() && ins.operands[0].kind == OperandKind::reg &&
                     ins.operands[0].vector_reg;
      if (ins.is_float || vec_dst) {
        for (std::size_t i = 0; i < ins.operands.size(); ++i) {
          const Operand& o = ins.operands[i];
          if (o.kind == OperandKind::mem && ins.is_float) {
            if (auto a = ins.memory_address())
              found.push_back({*a, TypeKind::float_, o.size ? o.size : 8u});
          } else if (i > 0 && o.kind == OperandKind::reg && !o.vector_reg) {
            auto l = loaded.find(o.reg);
            if (l != loaded.end())
              found.push_back({l->second.first, TypeKind::float_, l->second.second});
          }
        }
      }
      if (ins.op == Op::mov && ins.operands.size() == 2 &&
          ins.operands[0].kind == OperandKind::reg && !ins.operands[0].vector_reg &&
          ins.operands[1].kind == OperandKind::mem) {
        if (auto a = ins.memory_address()) {
          loaded[ins.operands[0].reg] = {*a, ins.operands[0].size};
          continue;
        }
      }
      for (auto l = loaded.begin(); l != loaded.end();)
        l = ins.writes(l->first) ? loaded.erase(l) : std::next(l);
    }
  }

  // Strings at operand-referenced addresses.
  for (Addr a : operand_values(result)) {
    if (!image.is_data(a)) continue;
    if (std::size_t n = string_extent(image.bytes_from(a)))
      found.push_back({a, TypeKind::string, n});
  }

  std::sort(found.begin(), found.end(), [](const auto& x, const auto& y) {
    return std::tuple(x.vaddr, int(x.kind)) < std::tuple(y.vaddr, int(y.kind));
  });
  std::vector<InferredType> out;
  for (const auto& t : found)
    if (out.empty() || t.vaddr >= out.back().vaddr + out.back().extent)
      out.push_back(t);
  return out;
}

namespace {

struct Unit {
  Candidate cand;
  Xref xref;
};

void group_tables(std::vector<Unit>& units, const StrategyConfig& config,
                  TableScan& out) {
  std::size_t i = 0;
  while (i < units.size()) {
    std::size_t j = i + 1;
    while (j < units.size()) {
      const Unit& p = units[j - 1];
      const Unit& q = units[j];
      if (q.cand.from != p.cand.from + p.cand.width) break;
      if (config.table_split_distance) {
        Addr d = q.cand.value > p.cand.value ? q.cand.value - p.cand.value
                                             : p.cand.value - q.cand.value;
        if (d > config.table_split_distance) break;
      }
      ++j;
    }
    std::size_t n = j - i;
    if (n < config.min_table_size) {
      for (std::size_t k = i; k < j; ++k)
        out.rejections.push_back({units[k].cand, RejectReason::table_size});
    } else {
      AddressTable t{units[i].cand.from, {}, units[i].cand.width};
      for (std::size_t k = i; k < j; ++k) {
        t.entries.push_back(units[k].cand.value);
        Xref x = units[k].xref;
        if (n > 1) x.origin = XrefOrigin::address_table;
        out.xrefs.push_back(x);
      }
      out.tables.push_back(std::move(t));
    }
    i = j;
  }
}

// Type-directed walk: pointer, then string, then arithmetic sequence, else
// one byte forward.
void sliding_walk(const BinaryImage& image, const DisasmResult& result,
                  const StrategyConfig& config, const SymbolContext& ctx,
                  const std::vector<InferredType>& types, const Range& r,
                  std::vector<Unit>& units, TableScan& out) {
  unsigned word = machine_size(image.mode);
  auto unit_at = [&](Addr a) -> std::optional<std::uint64_t> {
    if (a + word > r.end()) return std::nullopt;
    return image.read_uint(a, word);
  };
  Addr a = r.start;
  while (a < r.end()) {
    if (auto v = unit_at(a)) {
      Candidate c{a, *v, std::uint8_t(word), a % word == 0,
                  CandidateOrigin::data_unit};
      auto res = classify_candidate(c, image, result, config, ctx);
      if (auto* x = std::get_if<Xref>(&res)) {
        if (config.float_exclusion && overlaps(a, word, types, TypeKind::float_)) {
          out.rejections.push_back({c, RejectReason::float_typed});
        } else {
          units.push_back({c, *x});
          a += word;
          continue;
        }
      }
    }
    auto bytes = image.bytes_from(a);
    if (bytes.size() > r.end() - a) bytes = bytes.first(r.end() - a);
    if (std::size_t n = string_extent(bytes)) {
      a += n;
      continue;
    }
    std::size_t run = 0;
    if (auto u0 = unit_at(a)) {
      if (auto u1 = unit_at(a + word)) {
        std::uint64_t step = *u1 - *u0;
        run = 2;
        std::uint64_t prev = *u1;
        while (auto u = unit_at(a + run * word)) {
          if (*u - prev != step) break;
          prev = *u;
          ++run;
        }
      }
    }
    if (run >= 3) {
      a += run * word;
      continue;
    }
    ++a;
  }
}

}  // namespace

TableScan scan_address_tables(const BinaryImage& image,
                              const DisasmResult& result,
                              const StrategyConfig& config,
                              const SymbolContext& ctx) {
  TableScan out;
  if (!config.data_units) return out;
  auto types = infer_types(image, result, config);
  std::vector<Unit> units;

  if (config.type_sliding) {
    for (const Range& r : unit_regions(image, result, config))
      sliding_walk(image, result, config, ctx, types, r, units, out);
  } else {
    for (const Candidate& c : extract_candidates(image, result, config)) {
      if (c.origin != CandidateOrigin::data_unit) continue;
      auto res = classify_candidate(c, image, result, config, ctx);
      if (auto* rej = std::get_if<Rejection>(&res)) {
        out.rejections.push_back(*rej);
        continue;
      }
      if (config.float_exclusion && overlaps(c.from, c.width, types, TypeKind::float_)) {
        out.rejections.push_back({c, RejectReason::float_typed});
        continue;
      }
      if (config.string_overlap == StringOverlap::prefer_string &&
          overlaps(c.from, c.width, types, TypeKind::string)) {
        out.rejections.push_back({c, RejectReason::string_overlap});
        continue;
      }
      if (!units.empty() &&
          c.from < units.back().cand.from + units.back().cand.width) {
        out.rejections.push_back({c, RejectReason::overlapping_pointer});
        continue;
      }
      units.push_back({c, std::get<Xref>(res)});
    }
  }
  std::sort(units.begin(), units.end(),
            [](const Unit& x, const Unit& y) { return x.cand.from < y.cand.from; });
  group_tables(units, config, out);
  return out;
}

SymbolizationResult symbolize(const BinaryImage& image,
                              const DisasmResult& result,
                              const StrategyConfig& config,
                              const SymbolContext& ctx) {
  SymbolizationResult out;
  for (const auto& [a, ins] : result.instructions) {
    for (const auto& c : ins.const_operands) {
      Candidate cand{a, c.value, c.size, true, CandidateOrigin::operand};
      auto res = classify_candidate(cand, image, result, config, ctx);
      if (auto* x = std::get_if<Xref>(&res))
        out.xrefs.push_back(*x);
      else
        out.rejections.push_back(std::get<Rejection>(res));
    }
  }
  TableScan scan = scan_address_tables(image, result, config, ctx);
  out.xrefs.insert(out.xrefs.end(), scan.xrefs.begin(), scan.xrefs.end());
  out.rejections.insert(out.rejections.end(), scan.rejections.begin(),
                        scan.rejections.end());
  out.tables = std::move(scan.tables);
  out.types = infer_types(image, result, config);
  std::sort(out.xrefs.begin(), out.xrefs.end());
  out.xrefs.erase(std::unique(out.xrefs.begin(), out.xrefs.end()), out.xrefs.end());
  return out;
}

std::vector<Addr> gap_code_targets(const BinaryImage& image,
                                   const DisasmResult& result,
                                   const StrategyConfig& config) {
  std::set<Addr> values = operand_values(result);
  unsigned word = machine_size(image.mode);
  for (const auto& s : image.sections) {
    if (s.executable) continue;
    for (Addr a = s.vaddr + (word - s.vaddr % word) % word; a + word <= s.end();
         a += word)
      if (auto v = image.read_uint(a, word)) values.insert(*v);
  }
  std::vector<Addr> out;
  for (Addr v : values) {
    if (v < config.min_value) continue;
    if (std::find(config.magic_values.begin(), config.magic_values.end(), v) !=
        config.magic_values.end())
      continue;
    if (!image.is_executable(v) || result.covering(v)) continue;
    out.push_back(v);
  }
  return out;
}

}  // namespace dislab
