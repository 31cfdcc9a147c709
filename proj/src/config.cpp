#include "dislab/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <sstream>

namespace dislab {

namespace {

template <class E, std::size_t N>
struct EnumNames {
  std::array<std::pair<E, const char*>, N> items;

  const char* name(E e) const {
    for (auto& [v, n] : items)
      if (v == e) return n;
    return "?";
  }
  E parse(std::string_view key, std::string_view s) const {
    for (auto& [v, n] : items)
      if (s == n) return v;
    throw ConfigError("bad value '" + std::string(s) + "' for " +
                      std::string(key) + " (expected " + list() + ")");
  }
  std::string list() const {
    std::string out;
    for (auto& [v, n] : items) {
      if (!out.empty()) out += '|';
      out += n;
    }
    return out;
  }
};

const EnumNames<Algorithm, 2> kAlgorithm{
    {{{Algorithm::linear, "linear"}, {Algorithm::recursive, "recursive"}}}};
const EnumNames<SweepPolicy, 3> kSweep{{{{SweepPolicy::skip_byte, "skip_byte"},
                                         {SweepPolicy::psi_repair, "psi_repair"},
                                         {SweepPolicy::exclude_region,
                                          "exclude_region"}}}};
const EnumNames<PrologueSet, 2> kPrologue{{{{PrologueSet::strict, "strict"},
                                            {PrologueSet::aggressive,
                                             "aggressive"}}}};
const EnumNames<MainMethod, 3> kMain{
    {{{MainMethod::none, "none"},
      {MainMethod::arg_propagation, "arg_propagation"},
      {MainMethod::byte_pattern, "byte_pattern"}}}};
const EnumNames<Alignment, 3> kAlign{
    {{{Alignment::machine, "machine"},
      {Alignment::four_unless_targeted, "four_unless_targeted"},
      {Alignment::none, "none"}}}};
const EnumNames<StringOverlap, 3> kString{
    {{{StringOverlap::off, "off"},
      {StringOverlap::prefer_string, "prefer_string"},
      {StringOverlap::prefer_pointer, "prefer_pointer"}}}};
const EnumNames<JtStrategy, 4> kJt{
    {{{JtStrategy::none, "none"},
      {JtStrategy::pattern_radare2, "pattern_radare2"},
      {JtStrategy::slice_dyninst, "slice_dyninst"},
      {JtStrategy::path_ghidra, "path_ghidra"}}}};
const EnumNames<CallScope, 3> kScope{{{{CallScope::none, "none"},
                                       {CallScope::block, "block"},
                                       {CallScope::function, "function"}}}};
const EnumNames<TailRules, 5> kTail{{{{TailRules::none, "none"},
                                      {TailRules::radare2, "radare2"},
                                      {TailRules::ghidra, "ghidra"},
                                      {TailRules::dyninst, "dyninst"},
                                      {TailRules::angr, "angr"}}}};
const EnumNames<NonRetMode, 4> kNonRet{
    {{{NonRetMode::none, "none"},
      {NonRetMode::no_ret_scan, "no_ret_scan"},
      {NonRetMode::all_paths, "all_paths"},
      {NonRetMode::fallthrough_evidence, "fallthrough_evidence"}}}};
const EnumNames<Propagation, 3> kProp{
    {{{Propagation::assume_fallthrough, "assume_fallthrough"},
      {Propagation::worklist_propagate, "worklist_propagate"},
      {Propagation::depth_first, "depth_first"}}}};

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("bad value '" + std::string(v) + "' for " +
                    std::string(key) + " (expected true|false)");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    std::string s(v);
    auto n = std::stoull(s, &used, 0);
    if (used == s.size()) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad integer '" + std::string(v) + "' for " +
                    std::string(key));
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (auto t = trim(cur); !t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (auto t = trim(cur); !t.empty()) out.push_back(t);
  return out;
}

struct Field {
  FlagInfo info;
  std::function<std::string(const StrategyConfig&)> get;
  std::function<void(StrategyConfig&, std::string_view)> set;
};

template <class E, std::size_t N>
Field enum_field(std::string key, E StrategyConfig::*m,
                 const EnumNames<E, N>& names, std::string technique,
                 std::string tools) {
  return {{key, names.list(), std::move(technique), std::move(tools)},
          [m, &names](const StrategyConfig& c) {
            return std::string(names.name(c.*m));
          },
          [m, &names, key](StrategyConfig& c, std::string_view v) {
            c.*m = names.parse(key, v);
          }};
}

Field bool_field(std::string key, bool StrategyConfig::*m,
                 std::string technique, std::string tools) {
  return {{key, "true|false", std::move(technique), std::move(tools)},
          [m](const StrategyConfig& c) {
            return std::string(c.*m ? "true" : "false");
          },
          [m, key](StrategyConfig& c, std::string_view v) {
            c.*m = parse_bool(key, v);
          }};
}

Field num_field(std::string key, std::uint64_t StrategyConfig::*m,
                std::string technique, std::string tools, bool as_hex = false) {
  return {{key, "integer", std::move(technique), std::move(tools)},
          [m, as_hex](const StrategyConfig& c) {
            return as_hex ? hex(c.*m) : std::to_string(c.*m);
          },
          [m, key](StrategyConfig& c, std::string_view v) {
            c.*m = parse_u64(key, v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(enum_field("disasm.algorithm", &StrategyConfig::algorithm,
                           kAlgorithm,
                           "linear sweep over symbol ranges then gaps, or "
                           "control-flow-following descent from seeds",
                           "objdump psi uroboros | dyninst ghidra angr bap radare2"));
    v.push_back(enum_field("sweep.policy", &StrategyConfig::sweep_policy, kSweep,
                           "on a bad opcode: skip one byte; patch padding and "
                           "re-sweep; or drop the code around the error",
                           "objdump | psi | uroboros"));
    v.push_back(bool_field("recursive.seed_symbols",
                           &StrategyConfig::seed_symbols,
                           "descent starts at function symbols",
                           "dyninst ghidra angr bap radare2"));
    v.push_back(bool_field("recursive.seed_main", &StrategyConfig::seed_main,
                           "descent starts at the detected main",
                           "dyninst ghidra angr bap radare2"));
    v.push_back(bool_field("recursive.prologue_match",
                           &StrategyConfig::prologue_match,
                           "prologue matches in gaps seed new descent",
                           "dyninst ghidra angr bap radare2"));
    v.push_back(enum_field("recursive.prologue_set",
                           &StrategyConfig::prologue_set, kPrologue,
                           "prologue pattern set used for matching",
                           "strict: ghidra radare2; aggressive: dyninst angr bap"));
    v.push_back(bool_field("recursive.gap_scan", &StrategyConfig::gap_scan,
                           "linear scan of remaining code gaps, skipping a "
                           "block on error",
                           "angr"));
    v.push_back(bool_field("recursive.xref_seed", &StrategyConfig::xref_seed,
                           "code pointers into gaps seed descent, rolled back "
                           "on error",
                           "ghidra radare2"));
    v.push_back(enum_field("funcid.main_method", &StrategyConfig::main_method,
                           kMain,
                           "main from the first startup-routine argument, or "
                           "from a raw byte pattern before the startup call",
                           "angr bap | dyninst radare2"));
    v.push_back(bool_field("funcid.eh_frame", &StrategyConfig::eh_frame,
                           "function entries from unwind (FDE) records",
                           "ghidra"));
    v.push_back(bool_field("funcid.call_targets", &StrategyConfig::call_targets,
                           "direct call targets are function entries",
                           "dyninst ghidra angr bap radare2"));
    v.push_back(bool_field("funcid.scan_begin", &StrategyConfig::scan_begin,
                           "each code piece found by gap scanning starts a "
                           "function",
                           "angr"));
    v.push_back(bool_field("symbolize.enabled", &StrategyConfig::symbolize,
                           "run the symbolization phase",
                           "uroboros mcsema ghidra angr"));
    v.push_back(bool_field("symbolize.data_units", &StrategyConfig::data_units,
                           "brute-force machine-size data units as pointer "
                           "candidates",
                           "uroboros mcsema ghidra angr"));
    v.push_back(bool_field("symbolize.scan_code_gaps",
                           &StrategyConfig::scan_code_gaps,
                           "also scan undisassembled code bytes for data units",
                           "ghidra angr"));
    v.push_back(enum_field("symbolize.alignment", &StrategyConfig::alignment,
                           kAlign,
                           "data-unit stride: machine aligned, 4-aligned "
                           "unless referenced, or every byte",
                           "uroboros mcsema | ghidra | angr"));
    v.push_back(bool_field("symbolize.code_entry_only",
                           &StrategyConfig::code_entry_only,
                           "code pointers into known functions must hit the "
                           "entry",
                           "ghidra"));
    v.push_back(num_field("symbolize.min_value", &StrategyConfig::min_value,
                          "smallest value accepted as a pointer", "ghidra"));
    v.push_back({{"symbolize.magic_values", "comma list or none",
                  "values never accepted as pointers", "ghidra"},
                 [](const StrategyConfig& c) {
                   if (c.magic_values.empty()) return std::string("none");
                   std::string out;
                   for (auto m : c.magic_values) {
                     if (!out.empty()) out += ',';
                     out += hex(m);
                   }
                   return out;
                 },
                 [](StrategyConfig& c, std::string_view v) {
                   c.magic_values.clear();
                   if (v == "none") return;
                   for (auto& s : split_list(v))
                     c.magic_values.push_back(
                         parse_u64("symbolize.magic_values", s));
                 }});
    v.push_back(num_field("symbolize.region_margin",
                          &StrategyConfig::region_margin,
                          "data regions are enlarged by this many bytes",
                          "ghidra angr"));
    v.push_back(num_field("symbolize.min_table_size",
                          &StrategyConfig::min_table_size,
                          "minimum number of entries in an address table",
                          "ghidra"));
    v.push_back(num_field("symbolize.table_split_distance",
                          &StrategyConfig::table_split_distance,
                          "split a table when adjacent entries are further "
                          "apart (0 = never)",
                          "ghidra", true));
    v.push_back(enum_field("symbolize.string_overlap",
                           &StrategyConfig::string_overlap, kString,
                           "resolve pointer/string overlaps",
                           "mcsema ghidra | angr"));
    v.push_back(bool_field("symbolize.float_exclusion",
                           &StrategyConfig::float_exclusion,
                           "data units used as floating point are not "
                           "pointers",
                           "angr"));
    v.push_back(bool_field("symbolize.type_sliding",
                           &StrategyConfig::type_sliding,
                           "data scan steps over inferred pointers, strings "
                           "and arithmetic sequences",
                           "angr"));
    v.push_back(enum_field("cfg.jt_strategy", &StrategyConfig::jt_strategy, kJt,
                           "jump table recovery: pattern match, bounded "
                           "backward slice, or single defining path",
                           "radare2 | dyninst angr | ghidra"));
    v.push_back(num_field("cfg.jt_bound_threshold",
                          &StrategyConfig::jt_bound_threshold,
                          "discard tables whose index bound exceeds this "
                          "(0 = unlimited)",
                          "radare2 ghidra angr"));
    v.push_back(num_field("cfg.slice_assign_limit",
                          &StrategyConfig::slice_assign_limit,
                          "assignments visited by the backward slice",
                          "dyninst"));
    v.push_back(num_field("cfg.slice_block_levels",
                          &StrategyConfig::slice_block_levels,
                          "block levels visited by the backward slice "
                          "(0 = unlimited)",
                          "angr"));
    v.push_back(enum_field("cfg.icall_scope", &StrategyConfig::icall_scope,
                           kScope,
                           "constant propagation scope for indirect calls",
                           "angr (block) ghidra (function)"));
    v.push_back(enum_field("cfg.tailcall_rules", &StrategyConfig::tailcall_rules,
                           kTail, "tail call rule set",
                           "radare2 ghidra dyninst angr"));
    v.push_back(num_field("cfg.tailcall_distance",
                          &StrategyConfig::tailcall_distance,
                          "jump distance above which a jump is a tail call",
                          "radare2", true));
    v.push_back(enum_field("cfg.nonret_mode", &StrategyConfig::nonret_mode,
                           kNonRet,
                           "non-returning detection: no reachable ret, every "
                           "path ends in a non-returning call, or fall-through "
                           "evidence at call sites",
                           "dyninst angr radare2 | bap | ghidra"));
    v.push_back(enum_field("cfg.nonret_propagation",
                           &StrategyConfig::nonret_propagation, kProp,
                           "handling of callees with unknown status",
                           "angr | radare2 bap | dyninst"));
    v.push_back({{"cfg.nonret_seeds", "comma list or none",
                  "library routines known not to return",
                  "dyninst ghidra angr bap radare2"},
                 [](const StrategyConfig& c) {
                   if (c.nonret_seeds.empty()) return std::string("none");
                   std::string out;
                   for (auto& s : c.nonret_seeds) {
                     if (!out.empty()) out += ',';
                     out += s;
                   }
                   return out;
                 },
                 [](StrategyConfig& c, std::string_view v) {
                   c.nonret_seeds.clear();
                   if (v != "none") c.nonret_seeds = split_list(v);
                 }});
    v.push_back({{"cfg.nonret_seed_file", "path or none",
                  "extra non-returning routine names, one per line",
                  "all recursive profiles"},
                 [](const StrategyConfig& c) {
                   return c.nonret_seed_file.empty() ? std::string("none")
                                                     : c.nonret_seed_file;
                 },
                 [](StrategyConfig& c, std::string_view v) {
                   c.nonret_seed_file = v == "none" ? "" : std::string(v);
                 }});
    v.push_back(num_field("cfg.nonret_unsafe_fallthroughs",
                          &StrategyConfig::nonret_unsafe_fallthroughs,
                          "unsafe fall-throughs that mark a callee "
                          "non-returning",
                          "ghidra"));
    v.push_back(num_field("cfg.nonret_passes", &StrategyConfig::nonret_passes,
                          "passes of fall-through based detection", "ghidra"));
    v.push_back(num_field("pipeline.max_rounds", &StrategyConfig::max_rounds,
                          "descent/resolution rounds before giving up on a "
                          "fixed point",
                          "all recursive profiles"));
    return v;
  }();
  return f;
}

StrategyConfig linear_base(std::string name, SweepPolicy p) {
  StrategyConfig c;
  c.profile = std::move(name);
  c.algorithm = Algorithm::linear;
  c.sweep_policy = p;
  c.seed_symbols = false;
  c.seed_main = false;
  c.main_method = MainMethod::none;
  c.call_targets = false;
  c.nonret_mode = NonRetMode::none;
  return c;
}

}  // namespace

std::vector<std::string> default_nonret_seeds() {
  return {"exit", "_exit", "abort", "__stack_chk_fail", "__assert_fail"};
}

std::vector<std::uint64_t> ghidra_magic_values() {
  return {0xffff, 0xff00, 0xffffff, 0xff0000, 0xffffffff, 0xffffff00,
          0xffff0000};
}

const std::vector<std::string>& profile_names() {
  static const std::vector<std::string> names = {
      "objdump", "psi",   "uroboros", "mcsema", "dyninst", "ghidra",
      "ghidra-ne", "angr", "angr-ns", "bap",    "radare2", "pure"};
  return names;
}

StrategyConfig profile(std::string_view name) {
  if (name == "objdump") return linear_base("objdump", SweepPolicy::skip_byte);
  if (name == "psi") return linear_base("psi", SweepPolicy::psi_repair);
  if (name == "uroboros") {
    auto c = linear_base("uroboros", SweepPolicy::exclude_region);
    c.symbolize = true;
    return c;
  }

  StrategyConfig c;
  c.profile = std::string(name);
  c.nonret_seeds = default_nonret_seeds();
  c.main_method = MainMethod::arg_propagation;
  c.jt_strategy = JtStrategy::none;
  c.nonret_mode = NonRetMode::no_ret_scan;
  c.nonret_propagation = Propagation::worklist_propagate;
  if (name == "pure") return c;

  if (name == "mcsema") {
    c.symbolize = true;
    c.string_overlap = StringOverlap::prefer_string;
    return c;
  }
  if (name == "dyninst") {
    c.prologue_match = true;
    c.prologue_set = PrologueSet::aggressive;
    c.main_method = MainMethod::byte_pattern;
    c.jt_strategy = JtStrategy::slice_dyninst;
    c.tailcall_rules = TailRules::dyninst;
    c.nonret_propagation = Propagation::depth_first;
    return c;
  }
  if (name == "ghidra" || name == "ghidra-ne") {
    c.prologue_match = true;
    c.prologue_set = PrologueSet::strict;
    c.xref_seed = true;
    c.main_method = MainMethod::none;
    c.seed_main = false;
    c.eh_frame = name == "ghidra";
    c.symbolize = true;
    c.scan_code_gaps = true;
    c.alignment = Alignment::four_unless_targeted;
    c.code_entry_only = true;
    c.min_value = 4096;
    c.magic_values = ghidra_magic_values();
    c.region_margin = 1024;
    c.min_table_size = 2;
    c.table_split_distance = 0xfffff;
    c.string_overlap = StringOverlap::prefer_string;
    c.jt_strategy = JtStrategy::path_ghidra;
    c.jt_bound_threshold = 1024;
    c.icall_scope = CallScope::function;
    c.tailcall_rules = TailRules::ghidra;
    c.nonret_mode = NonRetMode::fallthrough_evidence;
    return c;
  }
  if (name == "angr" || name == "angr-ns") {
    c.prologue_match = true;
    c.prologue_set = PrologueSet::aggressive;
    c.gap_scan = name == "angr";
    c.scan_begin = name == "angr";
    c.symbolize = true;
    c.scan_code_gaps = true;
    c.alignment = Alignment::none;
    c.region_margin = 1024;
    c.string_overlap = StringOverlap::prefer_pointer;
    c.float_exclusion = true;
    c.type_sliding = true;
    c.jt_strategy = JtStrategy::slice_dyninst;
    c.jt_bound_threshold = 100000;
    c.slice_block_levels = 3;
    c.icall_scope = CallScope::block;
    c.tailcall_rules = TailRules::angr;
    c.nonret_propagation = Propagation::assume_fallthrough;
    return c;
  }
  if (name == "bap") {
    c.prologue_match = true;
    c.prologue_set = PrologueSet::aggressive;
    c.nonret_mode = NonRetMode::all_paths;
    return c;
  }
  if (name == "radare2") {
    c.prologue_match = true;
    c.prologue_set = PrologueSet::strict;
    c.xref_seed = true;
    c.main_method = MainMethod::byte_pattern;
    c.jt_strategy = JtStrategy::pattern_radare2;
    c.jt_bound_threshold = 512;
    c.tailcall_rules = TailRules::radare2;
    return c;
  }
  std::string list;
  for (auto& n : profile_names()) list += " " + n;
  throw UnknownProfile("unknown profile '" + std::string(name) +
                       "'; known profiles:" + list);
}

void apply_override(StrategyConfig& cfg, std::string_view key,
                    std::string_view value) {
  for (const auto& f : fields()) {
    if (f.info.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown flag '" + std::string(key) + "'");
}

void apply_assignment(StrategyConfig& cfg, std::string_view a) {
  auto eq = a.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("expected key=value, got '" + std::string(a) + "'");
  apply_override(cfg, trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
}

void apply_config_text(StrategyConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    if (trim(line).empty()) continue;
    apply_assignment(cfg, line);
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(
    const StrategyConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.info.key, f.get(cfg));
  return out;
}

const std::vector<FlagInfo>& flag_catalog() {
  static const std::vector<FlagInfo> cat = [] {
    std::vector<FlagInfo> v;
    for (const auto& f : fields()) v.push_back(f.info);
    return v;
  }();
  return cat;
}

std::vector<std::string> resolved_nonret_seeds(const StrategyConfig& cfg) {
  std::vector<std::string> out = cfg.nonret_seeds;
  if (!cfg.nonret_seed_file.empty()) {
    std::ifstream f(cfg.nonret_seed_file);
    if (!f) throw ConfigError("cannot read seed file " + cfg.nonret_seed_file);
    std::string line;
    while (std::getline(f, line)) {
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      if (auto t = trim(line); !t.empty()) out.push_back(t);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace dislab
