#include "dislab/image.hpp"

#include <elf.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace dislab {

const Section* BinaryImage::section_at(Addr a) const {
  auto it = std::upper_bound(
      sections.begin(), sections.end(), a,
      [](Addr v, const Section& s) { return v < s.vaddr; });
  if (it == sections.begin()) return nullptr;
  --it;
  return it->contains(a) ? &*it : nullptr;
}

bool BinaryImage::is_executable(Addr a) const {
  const Section* s = section_at(a);
  return s && s->executable;
}

bool BinaryImage::is_data(Addr a) const {
  const Section* s = section_at(a);
  return s && !s->executable;
}

std::span<const std::uint8_t> BinaryImage::bytes_from(Addr a) const {
  const Section* s = section_at(a);
  if (!s) return {};
  return std::span<const std::uint8_t>(s->bytes).subspan(a - s->vaddr);
}

std::optional<std::uint64_t> BinaryImage::read_uint(Addr a,
                                                    unsigned width) const {
  auto b = bytes_from(a);
  if (b.size() < width || width > 8) return std::nullopt;
  std::uint64_t v = 0;
  for (unsigned i = 0; i < width; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

const SymbolEntry* BinaryImage::symbol_named(std::string_view name) const {
  for (const auto& s : symbols)
    if (s.name == name) return &s;
  return nullptr;
}

const SymbolEntry* BinaryImage::function_at(Addr a) const {
  for (const auto& s : symbols)
    if (s.is_function && s.vaddr == a) return &s;
  return nullptr;
}

void BinaryImage::validate() {
  std::sort(sections.begin(), sections.end(),
            [](const Section& a, const Section& b) { return a.vaddr < b.vaddr; });
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const auto& s = sections[i];
    if (s.bytes.size() != s.size)
      throw LoadError("section", "section " + s.name + " size mismatch");
    if (s.kind == SectionKind::code && !s.executable)
      throw LoadError("section", "code section " + s.name + " not executable");
    if (i > 0 && sections[i - 1].end() > s.vaddr)
      throw LoadError("section", "sections " + sections[i - 1].name +
                                     " and " + s.name + " overlap");
  }
  if (!is_executable(entry_point))
    throw LoadError("entry", "entry point outside executable sections");
  // Function symbols must point into code.
  std::erase_if(symbols, [this](const SymbolEntry& s) {
    return s.is_function && !is_executable(s.vaddr);
  });
  std::stable_sort(symbols.begin(), symbols.end(),
                   [](const SymbolEntry& a, const SymbolEntry& b) {
                     return a.vaddr < b.vaddr;
                   });
}

namespace {

template <class T>
T read_struct(std::span<const std::uint8_t> data, std::uint64_t off,
              const char* field) {
  if (off > data.size() || data.size() - off < sizeof(T))
    throw LoadError(field, std::string("truncated at ") + field);
  T v;
  std::memcpy(&v, data.data() + off, sizeof(T));
  return v;
}

template <class Ehdr, class Shdr, class Sym>
BinaryImage load_elf(std::span<const std::uint8_t> data,
                     const std::string& path) {
  BinaryImage img;
  img.path = path;
  auto eh = read_struct<Ehdr>(data, 0, "e_ident");
  if (eh.e_machine == EM_X86_64)
    img.mode = Mode::x64;
  else if (eh.e_machine == EM_386)
    img.mode = Mode::x86;
  else
    throw UnsupportedArchitecture("e_machine", "unsupported architecture");
  if ((img.mode == Mode::x64) != (sizeof(Ehdr) == sizeof(Elf64_Ehdr)))
    throw UnsupportedArchitecture("e_ident", "class does not match machine");
  if (eh.e_shentsize != sizeof(Shdr) && eh.e_shnum != 0)
    throw LoadError("e_shentsize", "bad section header entry size");
  std::uint64_t shoff = eh.e_shoff;
  std::uint64_t shnum = eh.e_shnum;
  if (shoff > data.size() || shnum * sizeof(Shdr) > data.size() - shoff)
    throw LoadError("e_shoff", "section header table outside file");
  std::vector<Shdr> sh(shnum);
  for (std::uint64_t i = 0; i < shnum; ++i)
    sh[i] = read_struct<Shdr>(data, shoff + i * sizeof(Shdr), "e_shoff");
  if (eh.e_shstrndx >= shnum && shnum > 0)
    throw LoadError("e_shstrndx", "bad section name table index");

  auto section_data = [&](const Shdr& s, const char* field) {
    if (s.sh_type == SHT_NOBITS) return std::span<const std::uint8_t>();
    if (s.sh_offset > data.size() || s.sh_size > data.size() - s.sh_offset)
      throw LoadError(field, "section contents outside file");
    return data.subspan(s.sh_offset, s.sh_size);
  };
  auto cstr = [&](std::span<const std::uint8_t> tab, std::uint64_t off) {
    std::string out;
    for (std::uint64_t i = off; i < tab.size() && tab[i]; ++i)
      out.push_back(char(tab[i]));
    return out;
  };
  std::span<const std::uint8_t> shstr;
  if (shnum > 0) shstr = section_data(sh[eh.e_shstrndx], "e_shstrndx");

  for (const auto& s : sh) {
    if (!(s.sh_flags & SHF_ALLOC) || s.sh_size == 0) continue;
    Section sec;
    sec.name = cstr(shstr, s.sh_name);
    sec.vaddr = s.sh_addr;
    sec.size = s.sh_size;
    sec.executable = (s.sh_flags & SHF_EXECINSTR) != 0;
    if (sec.executable)
      sec.kind = SectionKind::code;
    else if (s.sh_type == SHT_PROGBITS || s.sh_type == SHT_NOBITS ||
             s.sh_type == SHT_INIT_ARRAY || s.sh_type == SHT_FINI_ARRAY)
      sec.kind = SectionKind::data;
    if (s.sh_type == SHT_NOBITS) {
      if (s.sh_size > (std::uint64_t(1) << 28))
        throw LoadError("sh_size", "oversized bss section");
      sec.bytes.assign(s.sh_size, 0);
    } else {
      auto b = section_data(s, "sh_offset");
      sec.bytes.assign(b.begin(), b.end());
    }
    img.sections.push_back(std::move(sec));
  }

  for (const auto& s : sh) {
    if (s.sh_type != SHT_SYMTAB && s.sh_type != SHT_DYNSYM) continue;
    if (s.sh_link >= shnum) throw LoadError("sh_link", "bad string table link");
    auto tab = section_data(s, "sh_offset");
    auto str = section_data(sh[s.sh_link], "sh_link");
    SymbolSource src =
        s.sh_type == SHT_SYMTAB ? SymbolSource::symtab : SymbolSource::dynsym;
    for (std::uint64_t off = sizeof(Sym); off + sizeof(Sym) <= tab.size();
         off += sizeof(Sym)) {
      auto sym = read_struct<Sym>(tab, off, "sh_offset");
      unsigned type = sym.st_info & 0xf;
      if (sym.st_shndx == SHN_UNDEF) continue;
      if (type != STT_FUNC && type != STT_OBJECT) continue;
      SymbolEntry e;
      e.name = cstr(str, sym.st_name);
      e.vaddr = sym.st_value;
      e.size = sym.st_size;
      e.is_function = type == STT_FUNC;
      e.source = src;
      img.symbols.push_back(std::move(e));
    }
  }
  img.entry_point = eh.e_entry;
  img.validate();
  return img;
}

std::vector<std::uint8_t> parse_hex(std::string_view hex, int line) {
  if (hex.size() % 2)
    throw LoadError("section", "odd hex length at line " + std::to_string(line));
  std::vector<std::uint8_t> out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    unsigned v = 0;
    for (int k = 0; k < 2; ++k) {
      char c = hex[i + k];
      int d = (c >= '0' && c <= '9')   ? c - '0'
              : (c >= 'a' && c <= 'f') ? c - 'a' + 10
              : (c >= 'A' && c <= 'F') ? c - 'A' + 10
                                       : -1;
      if (d < 0)
        throw LoadError("section",
                        "bad hex digit at line " + std::to_string(line));
      v = v * 16 + unsigned(d);
    }
    out.push_back(std::uint8_t(v));
  }
  return out;
}

std::uint64_t parse_num(const std::string& tok, const char* field, int line,
                        int base) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(tok, &used, base);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw LoadError(field, std::string("bad ") + field + " at line " +
                               std::to_string(line));
  }
}

}  // namespace

BinaryImage parse_fixture(std::string_view text, const std::string& path) {
  BinaryImage img;
  img.path = path;
  bool have_mode = false, have_entry = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
    std::istringstream ls(raw);
    std::vector<std::string> tok{std::istream_iterator<std::string>(ls), {}};
    if (tok.empty()) continue;
    const std::string& d = tok[0];
    if (d == "mode" && tok.size() == 2) {
      if (tok[1] == "x64")
        img.mode = Mode::x64;
      else if (tok[1] == "x86")
        img.mode = Mode::x86;
      else
        throw UnsupportedArchitecture("mode", "unsupported mode " + tok[1]);
      have_mode = true;
    } else if (d == "section" && (tok.size() == 5 || tok.size() == 4)) {
      Section s;
      s.name = tok[1];
      s.vaddr = parse_num(tok[2], "section", line, 16);
      if (tok[3] == "code")
        s.kind = SectionKind::code;
      else if (tok[3] == "data")
        s.kind = SectionKind::data;
      else
        throw LoadError("section", "bad section kind at line " +
                                       std::to_string(line));
      s.executable = s.kind == SectionKind::code;
      if (tok.size() == 5) s.bytes = parse_hex(tok[4], line);
      s.size = s.bytes.size();
      img.sections.push_back(std::move(s));
    } else if (d == "symbol" && tok.size() == 5) {
      SymbolEntry s;
      s.name = tok[1];
      s.vaddr = parse_num(tok[2], "symbol", line, 16);
      s.size = parse_num(tok[3], "symbol", line, 0);
      if (tok[4] != "func" && tok[4] != "obj")
        throw LoadError("symbol", "bad symbol type at line " +
                                      std::to_string(line));
      s.is_function = tok[4] == "func";
      img.symbols.push_back(std::move(s));
    } else if (d == "entry" && tok.size() == 2) {
      img.entry_point = parse_num(tok[1], "entry", line, 16);
      have_entry = true;
    } else {
      throw LoadError(d, "unknown or malformed directive at line " +
                             std::to_string(line));
    }
  }
  if (!have_mode) throw LoadError("mode", "missing mode directive");
  if (!have_entry) throw LoadError("entry", "missing entry directive");
  img.validate();
  return img;
}

namespace {

bool looks_like_fixture(std::span<const std::uint8_t> data) {
  // First directive (after comments/blank lines) must be `mode`.
  std::string_view text(reinterpret_cast<const char*>(data.data()),
                        data.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto ln = text.substr(pos, eol == std::string_view::npos
                                   ? std::string_view::npos
                                   : eol - pos);
    auto first = ln.find_first_not_of(" \t\r");
    if (first != std::string_view::npos && ln[first] != '#')
      return ln.substr(first, 5) == "mode " || ln.substr(first, 5) == "mode\t";
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return false;
}

}  // namespace

BinaryImage load_binary_bytes(std::span<const std::uint8_t> data,
                              const std::string& path) {
  if (data.size() >= EI_NIDENT && std::memcmp(data.data(), ELFMAG, SELFMAG) == 0) {
    if (data[EI_DATA] != ELFDATA2LSB)
      throw UnsupportedArchitecture("e_ident", "big-endian container");
    if (data[EI_CLASS] == ELFCLASS64)
      return load_elf<Elf64_Ehdr, Elf64_Shdr, Elf64_Sym>(data, path);
    if (data[EI_CLASS] == ELFCLASS32)
      return load_elf<Elf32_Ehdr, Elf32_Shdr, Elf32_Sym>(data, path);
    throw LoadError("e_ident", "bad ELF class");
  }
  if (looks_like_fixture(data))
    return parse_fixture(
        std::string_view(reinterpret_cast<const char*>(data.data()),
                         data.size()),
        path);
  throw LoadError("magic", "bad magic");
}

BinaryImage load_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("path", "cannot open " + path);
  std::vector<std::uint8_t> data{std::istreambuf_iterator<char>(f), {}};
  return load_binary_bytes(data, path);
}

std::vector<Range> code_regions(const BinaryImage& image,
                                std::vector<Addr>* overlaps) {
  std::vector<Range> syms;
  for (const auto& s : image.symbols) {
    if (!s.is_function || s.size == 0) continue;
    const Section* sec = image.section_at(s.vaddr);
    if (!sec || !sec->executable) continue;
    Addr end = std::min<Addr>(s.vaddr + s.size, sec->end());
    syms.push_back({s.vaddr, end - s.vaddr});
  }
  std::sort(syms.begin(), syms.end());
  std::vector<Range> out;
  Addr covered = 0;
  for (const auto& r : syms) {
    Range t = r;
    if (!out.empty() && t.start < covered) {
      if (overlaps) overlaps->push_back(r.start);
      if (t.end() <= covered) continue;
      t = {covered, t.end() - covered};
    }
    out.push_back(t);
    covered = t.end();
  }
  std::vector<Range> gaps;
  for (const auto& sec : image.sections) {
    if (!sec.executable) continue;
    Addr cur = sec.vaddr;
    for (const auto& r : out) {
      if (r.end() <= sec.vaddr || r.start >= sec.end()) continue;
      if (r.start > cur) gaps.push_back({cur, r.start - cur});
      cur = std::max(cur, r.end());
    }
    if (cur < sec.end()) gaps.push_back({cur, sec.end() - cur});
  }
  out.insert(out.end(), gaps.begin(), gaps.end());
  return out;
}

std::vector<Addr> symbol_seeds(const BinaryImage& image) {
  std::set<Addr> s{image.entry_point};
  for (const auto& sym : image.symbols)
    if (sym.is_function) s.insert(sym.vaddr);
  return {s.begin(), s.end()};
}

}  // namespace dislab
