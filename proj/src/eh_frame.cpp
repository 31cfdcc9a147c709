#include <map>
#include <sstream>

#include "dislab/funcid.hpp"

namespace dislab {

EhFrameError::EhFrameError(std::uint64_t off, const std::string& msg)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "eh_frame record at offset 0x" << std::hex << off << ": " << msg;
        return os.str();
      }()),
      offset(off) {}

namespace {

constexpr std::uint8_t DW_EH_PE_omit = 0xff;
constexpr std::uint8_t DW_EH_PE_absptr = 0x00;
constexpr std::uint8_t DW_EH_PE_uleb128 = 0x01;
constexpr std::uint8_t DW_EH_PE_udata2 = 0x02;
constexpr std::uint8_t DW_EH_PE_udata4 = 0x03;
constexpr std::uint8_t DW_EH_PE_udata8 = 0x04;
constexpr std::uint8_t DW_EH_PE_sleb128 = 0x09;
constexpr std::uint8_t DW_EH_PE_sdata2 = 0x0a;
constexpr std::uint8_t DW_EH_PE_sdata4 = 0x0b;
constexpr std::uint8_t DW_EH_PE_sdata8 = 0x0c;
constexpr std::uint8_t DW_EH_PE_pcrel = 0x10;

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, std::uint64_t pos, std::uint64_t end,
         std::uint64_t record)
      : b_(b), pos_(pos), end_(end), record_(record) {}

  std::uint64_t pos() const { return pos_; }
  void seek(std::uint64_t p) { pos_ = p; }

  std::uint64_t uint(unsigned n) {
    need(n);
    std::uint64_t v = 0;
    for (unsigned i = 0; i < n; ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::int64_t sint(unsigned n) {
    std::uint64_t v = uint(n);
    if (n < 8 && (v >> (8 * n - 1)) & 1) v |= ~std::uint64_t(0) << (8 * n);
    return std::int64_t(v);
  }
  std::uint64_t uleb() {
    std::uint64_t v = 0;
    unsigned shift = 0;
    for (;;) {
      std::uint8_t c = std::uint8_t(uint(1));
      if (shift < 64) v |= std::uint64_t(c & 0x7f) << shift;
      shift += 7;
      if (!(c & 0x80)) return v;
    }
  }
  std::int64_t sleb() {
    std::int64_t v = 0;
    unsigned shift = 0;
    std::uint8_t c;
    do {
      c = std::uint8_t(uint(1));
      if (shift < 64) v |= std::int64_t(c & 0x7f) << shift;
      shift += 7;
    } while (c & 0x80);
    if (shift < 64 && (c & 0x40)) v |= -(std::int64_t(1) << shift);
    return v;
  }
  std::string cstr() {
    std::string s;
    for (;;) {
      char c = char(uint(1));
      if (!c) return s;
      s += c;
    }
  }
  // Pointer in encoding enc; field_vaddr is the address of the field.
  std::uint64_t encoded(std::uint8_t enc, Addr field_vaddr, unsigned word) {
    std::uint64_t v;
    switch (enc & 0x0f) {
      case DW_EH_PE_absptr: v = uint(word); break;
      case DW_EH_PE_uleb128: v = uleb(); break;
      case DW_EH_PE_udata2: v = uint(2); break;
      case DW_EH_PE_udata4: v = uint(4); break;
      case DW_EH_PE_udata8: v = uint(8); break;
      case DW_EH_PE_sleb128: v = std::uint64_t(sleb()); break;
      case DW_EH_PE_sdata2: v = std::uint64_t(sint(2)); break;
      case DW_EH_PE_sdata4: v = std::uint64_t(sint(4)); break;
      case DW_EH_PE_sdata8: v = std::uint64_t(sint(8)); break;
      default: throw EhFrameError(record_, "unsupported pointer format");
    }
    switch (enc & 0x70) {
      case 0: break;
      case DW_EH_PE_pcrel: v += field_vaddr; break;
      default: throw EhFrameError(record_, "unsupported pointer application");
    }
    if (enc & 0x80) throw EhFrameError(record_, "indirect pointer encoding");
    if (word == 4) v &= 0xffffffff;
    return v;
  }

 private:
  void need(unsigned n) {
    if (pos_ + n > end_) throw EhFrameError(record_, "truncated record");
  }
  std::span<const std::uint8_t> b_;
  std::uint64_t pos_, end_, record_;
};

struct Cie {
  std::uint8_t fde_enc = DW_EH_PE_absptr;
  bool has_aug_data = false;
};

}  // namespace

std::vector<Addr> parse_eh_frame(std::span<const std::uint8_t> bytes,
                                 Addr base, Mode mode) {
  unsigned word = machine_size(mode);
  std::map<std::uint64_t, Cie> cies;
  std::vector<Addr> out;
  std::uint64_t off = 0;
  while (off < bytes.size()) {
    Reader hdr(bytes, off, bytes.size(), off);
    std::uint64_t len = hdr.uint(4);
    if (len == 0) break;  // terminator
    if (len == 0xffffffff) len = hdr.uint(8);
    std::uint64_t body = hdr.pos();
    if (len > bytes.size() - body) throw EhFrameError(off, "length past end");
    std::uint64_t end = body + len;
    Reader r(bytes, body, end, off);
    std::uint64_t id_pos = r.pos();
    std::uint32_t id = std::uint32_t(r.uint(4));
    if (id == 0) {
      Cie cie;
      std::uint8_t version = std::uint8_t(r.uint(1));
      if (version != 1 && version != 3)
        throw EhFrameError(off, "unsupported CIE version");
      std::string aug = r.cstr();
      if (aug.find("eh") != std::string::npos) r.uint(word);
      r.uleb();  // code alignment
      r.sleb();  // data alignment
      if (version == 1)
        r.uint(1);
      else
        r.uleb();
      if (!aug.empty() && aug[0] == 'z') {
        std::uint64_t alen = r.uleb();
        std::uint64_t aend = r.pos() + alen;
        for (std::size_t i = 1; i < aug.size(); ++i) {
          char c = aug[i];
          if (c == 'R') {
            cie.fde_enc = std::uint8_t(r.uint(1));
          } else if (c == 'P') {
            std::uint8_t penc = std::uint8_t(r.uint(1));
            r.encoded(penc & 0x7f, base + r.pos(), word);
          } else if (c == 'L') {
            r.uint(1);
          } else if (c == 'S' || c == 'B') {
          } else {
            break;  // unknown augmentation: the length lets us skip it
          }
        }
        r.seek(aend);
        cie.has_aug_data = true;
      }
      cies[off] = cie;
    } else {
      std::uint64_t cie_off = id_pos - id;
      auto it = cies.find(cie_off);
      if (it == cies.end()) throw EhFrameError(off, "FDE names unknown CIE");
      const Cie& cie = it->second;
      if (cie.fde_enc != DW_EH_PE_omit) {
        Addr loc = r.encoded(cie.fde_enc, base + r.pos(), word);
        out.push_back(loc);
      }
    }
    off = end;
  }
  return out;
}

std::vector<Addr> eh_frame_entries(const BinaryImage& image) {
  for (const auto& s : image.sections)
    if (s.name == ".eh_frame") return parse_eh_frame(s.bytes, s.vaddr, image.mode);
  return {};
}

}  // namespace dislab
