#include "dislab/record.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dislab/pipeline.hpp"

namespace dislab {

const std::vector<Phase>& all_phases() {
  static const std::vector<Phase> v{Phase::inst, Phase::xref,     Phase::func,
                                    Phase::edge, Phase::cg,       Phase::tailcall,
                                    Phase::nonret, Phase::jtab};
  return v;
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::inst: return "inst";
    case Phase::xref: return "xref";
    case Phase::func: return "func";
    case Phase::edge: return "edge";
    case Phase::cg: return "cg";
    case Phase::tailcall: return "tailcall";
    case Phase::nonret: return "nonret";
    case Phase::jtab: return "jtab";
  }
  return "?";
}

std::optional<Phase> phase_from(std::string_view s) {
  for (Phase p : all_phases())
    if (s == to_string(p)) return p;
  return std::nullopt;
}

FormatError::FormatError(std::size_t l, const std::string& msg)
    : std::runtime_error("line " + std::to_string(l) + ": " + msg), line(l) {}

const std::pair<const Addr, InstRecord>* Record::instruction_covering(Addr a) const {
  auto it = instructions.upper_bound(a);
  if (it == instructions.begin()) return nullptr;
  --it;
  return a < it->first + it->second.size ? &*it : nullptr;
}

bool Record::in_padding(Addr a) const {
  auto it = padding.upper_bound(a);
  if (it == padding.begin()) return false;
  --it;
  return a < it->first + it->second;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

struct Parser {
  std::size_t line = 0;

  std::uint64_t num(std::string_view s, int base) const {
    if (base == 16 && s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
      s.remove_prefix(2);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size())
      throw FormatError(line, "bad number '" + std::string(s) + "'");
    return v;
  }
  Addr hex(std::string_view s) const { return num(s, 16); }
  std::uint64_t dec(std::string_view s) const { return num(s, 10); }
  void arity(const std::vector<std::string_view>& f, std::size_t lo, std::size_t hi) const {
    if (f.size() < lo || f.size() > hi)
      throw FormatError(line, "wrong field count for " + std::string(f[0]));
  }
};

std::string hex(Addr a) {
  std::ostringstream os;
  os << std::hex << a;
  return os.str();
}

}  // namespace

Record parse_record(std::string_view text) {
  Record r;
  Parser p;
  std::map<Addr, std::size_t> inst_line;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++p.line;
    std::string_view s = trim(raw);
    if (s.empty()) continue;
    if (s[0] == '#') {
      std::string_view body = trim(s.substr(1));
      if (body.rfind("config:", 0) == 0) {
        std::string_view kv = trim(body.substr(7));
        auto eq = kv.find('=');
        if (eq == std::string_view::npos) throw FormatError(p.line, "bad config line");
        r.config.emplace_back(std::string(trim(kv.substr(0, eq))),
                              std::string(trim(kv.substr(eq + 1))));
      } else if (body.rfind("phases:", 0) == 0) {
        std::set<Phase> ph;
        for (auto t : split(body.substr(7))) {
          auto x = phase_from(t);
          if (!x) throw FormatError(p.line, "unknown phase '" + std::string(t) + "'");
          ph.insert(*x);
        }
        r.phases = ph;
      }
      continue;
    }
    if (auto h = s.find('#'); h != std::string_view::npos) s = trim(s.substr(0, h));
    auto f = split(s);
    std::string_view tag = f[0];
    if (tag == "[inst]") {
      p.arity(f, 3, 4);
      Addr a = p.hex(f[1]);
      InstRecord ir{p.dec(f[2]), f.size() > 3 ? std::string(f[3]) : ""};
      if (ir.size == 0) throw FormatError(p.line, "zero-size instruction");
      if (!r.instructions.emplace(a, ir).second)
        throw FormatError(p.line, "duplicate instruction " + hex(a));
      inst_line[a] = p.line;
    } else if (tag == "[pad]") {
      p.arity(f, 3, 3);
      r.padding[p.hex(f[1])] = p.dec(f[2]);
    } else if (tag == "[func]") {
      p.arity(f, 2, 3);
      r.functions[p.hex(f[1])] = f.size() > 2 ? std::string(f[2]) : "";
    } else if (tag == "[main]") {
      p.arity(f, 2, 2);
      r.main = p.hex(f[1]);
    } else if (tag == "[xref]") {
      p.arity(f, 5, 5);
      auto k = xref_kind_from(f[1]);
      if (!k) throw FormatError(p.line, "bad xref kind");
      Xref x{p.hex(f[2]), p.hex(f[3]), *k, std::uint8_t(p.dec(f[4])), XrefOrigin::operand};
      r.xrefs.insert(x);
    } else if (tag == "[jtab]") {
      p.arity(f, 4, 1u << 20);
      TableRecord t{p.hex(f[1]), p.hex(f[2]), unsigned(p.dec(f[3])), {}};
      for (std::size_t i = 4; i < f.size(); ++i) t.targets.push_back(p.hex(f[i]));
      r.tables[t.site] = std::move(t);
    } else if (tag == "[junres]") {
      p.arity(f, 3, 3);
      r.unresolved_tables[p.hex(f[1])] = std::string(f[2]);
    } else if (tag == "[edge]") {
      p.arity(f, 3, 3);
      r.edges.insert({p.hex(f[1]), p.hex(f[2])});
    } else if (tag == "[cg]") {
      p.arity(f, 3, 3);
      r.call_graph.insert({p.hex(f[1]), p.hex(f[2])});
    } else if (tag == "[tcall]") {
      p.arity(f, 3, 3);
      r.tail_calls.insert({p.hex(f[1]), p.hex(f[2])});
    } else if (tag == "[noret]") {
      p.arity(f, 2, 2);
      r.nonret.insert(p.hex(f[1]));
    } else if (tag == "[reject]") {
      p.arity(f, 4, 4);
      r.rejects.insert({p.hex(f[1]), p.hex(f[2]), std::string(f[3])});
    } else {
      throw FormatError(p.line, "unknown record " + std::string(tag));
    }
  }
  // Instructions must not overlap; padding must not overlap instructions.
  Addr prev_end = 0;
  bool first = true;
  for (const auto& [a, ir] : r.instructions) {
    if (!first && a < prev_end)
      throw FormatError(inst_line[a], "instruction " + hex(a) + " overlaps its predecessor");
    first = false;
    prev_end = a + ir.size;
  }
  for (const auto& [a, n] : r.padding) {
    auto it = r.instructions.lower_bound(a);
    bool bad = it != r.instructions.end() && it->first < a + n;
    if (it != r.instructions.begin()) {
      auto pv = std::prev(it);
      if (pv->first + pv->second.size > a) bad = true;
    }
    if (bad) throw FormatError(0, "padding " + hex(a) + " overlaps an instruction");
  }
  return r;
}

Record load_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_record(ss.str());
}

std::string emit_record(const Record& r) {
  std::ostringstream os;
  for (const auto& [k, v] : r.config) os << "# config: " << k << " = " << v << "\n";
  if (r.phases) {
    os << "# phases:";
    for (Phase p : *r.phases) os << ' ' << to_string(p);
    os << "\n";
  }
  if (r.main) os << "[main] " << hex(*r.main) << "\n";
  for (const auto& [a, ir] : r.instructions) {
    os << "[inst] " << hex(a) << ' ' << ir.size;
    if (!ir.tag.empty()) os << ' ' << ir.tag;
    os << "\n";
  }
  for (const auto& [a, n] : r.padding) os << "[pad] " << hex(a) << ' ' << n << "\n";
  for (const auto& [a, tag] : r.functions) {
    os << "[func] " << hex(a);
    if (!tag.empty()) os << ' ' << tag;
    os << "\n";
  }
  for (const auto& x : r.xrefs)
    os << "[xref] " << to_string(x.kind) << ' ' << hex(x.from) << ' ' << hex(x.to) << ' '
       << unsigned(x.width) << "\n";
  for (const auto& [s, t] : r.tables) {
    os << "[jtab] " << hex(t.site) << ' ' << hex(t.base) << ' ' << t.width;
    for (Addr x : t.targets) os << ' ' << hex(x);
    os << "\n";
  }
  for (const auto& [s, why] : r.unresolved_tables)
    os << "[junres] " << hex(s) << ' ' << why << "\n";
  for (const auto& [a, b] : r.edges) os << "[edge] " << hex(a) << ' ' << hex(b) << "\n";
  for (const auto& [a, b] : r.call_graph) os << "[cg] " << hex(a) << ' ' << hex(b) << "\n";
  for (const auto& [a, b] : r.tail_calls) os << "[tcall] " << hex(a) << ' ' << hex(b) << "\n";
  for (Addr a : r.nonret) os << "[noret] " << hex(a) << "\n";
  for (const auto& j : r.rejects)
    os << "[reject] " << hex(j.from) << ' ' << hex(j.value) << ' ' << j.reason << "\n";
  return os.str();
}

Record to_record(const AnalysisResult& res) {
  Record r;
  r.config = config_entries(res.config);
  std::set<Phase> phases{Phase::inst};
  if (res.symbols) phases.insert(Phase::xref);
  if (res.recursive())
    phases.insert({Phase::func, Phase::edge, Phase::cg, Phase::tailcall, Phase::nonret,
                   Phase::jtab});
  r.phases = phases;
  if (res.recursive()) r.main = res.main;
  for (const auto& [a, ins] : res.disasm.instructions) {
    auto p = res.disasm.provenance.find(a);
    r.instructions[a] = {ins.length, p == res.disasm.provenance.end() ? "" : to_string(p->second)};
  }
  if (res.symbols) {
    r.xrefs.insert(res.symbols->xrefs.begin(), res.symbols->xrefs.end());
    for (const auto& j : res.symbols->rejections)
      r.rejects.insert({j.candidate.from, j.candidate.value, to_string(j.reason)});
  }
  if (!res.recursive()) return r;
  for (const auto& f : res.functions) r.functions[f.vaddr] = to_string(f.source);
  for (const auto& t : res.tables)
    r.tables[t.site] = {t.site, t.base, t.entry_width, t.targets};
  for (const auto& u : res.unresolved_tables)
    r.unresolved_tables[u.site] = to_string(u.reason);
  if (res.cfg) {
    for (const auto& e : res.cfg->edges) r.edges.insert({e.from, e.to});
    for (const auto& c : res.cfg->call_graph) r.call_graph.insert({c.caller, c.callee});
  }
  for (const auto& t : res.tail_calls) r.tail_calls.insert({t.site, t.target});
  r.nonret = res.nonret.members;
  return r;
}

}  // namespace dislab
