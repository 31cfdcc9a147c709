#include "dislab/sweep.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <set>

namespace dislab {

namespace {

// Canonical multi-byte nops emitted by common assemblers.
const std::vector<std::vector<std::uint8_t>>& nop_encodings() {
  static const std::vector<std::vector<std::uint8_t>> nops = {
      {0x66, 0x90},
      {0x0f, 0x1f, 0x00},
      {0x0f, 0x1f, 0x40, 0x00},
      {0x0f, 0x1f, 0x44, 0x00, 0x00},
      {0x66, 0x0f, 0x1f, 0x44, 0x00, 0x00},
      {0x0f, 0x1f, 0x80, 0x00, 0x00, 0x00, 0x00},
      {0x0f, 0x1f, 0x84, 0x00, 0x00, 0x00, 0x00, 0x00},
      {0x66, 0x0f, 0x1f, 0x84, 0x00, 0x00, 0x00, 0x00, 0x00},
      {0x66, 0x2e, 0x0f, 0x1f, 0x84, 0x00, 0x00, 0x00, 0x00, 0x00},
      // 32-bit idioms
      {0x89, 0xf6},
      {0x8d, 0x76, 0x00},
      {0x8d, 0x74, 0x26, 0x00},
      {0x8d, 0xb6, 0x00, 0x00, 0x00, 0x00},
      {0x8d, 0xb4, 0x26, 0x00, 0x00, 0x00, 0x00},
      {0x8d, 0xbc, 0x27, 0x00, 0x00, 0x00, 0x00},
      {0x2e, 0x8d, 0xb4, 0x26, 0x00, 0x00, 0x00, 0x00},
  };
  return nops;
}

bool starts_with(std::span<const std::uint8_t> b,
                 const std::vector<std::uint8_t>& p) {
  return b.size() >= p.size() && std::equal(p.begin(), p.end(), b.begin());
}

// Bytes of the image with psi patches applied.
class Scratch {
 public:
  explicit Scratch(const BinaryImage& img) : img_(img) {}

  void patch(Range r) {
    for (Addr a = r.start; a < r.end(); ++a) bytes_[a] = 0x90;
  }

  std::span<const std::uint8_t> fetch(Addr a, Addr limit,
                                      std::array<std::uint8_t, 16>& buf) const {
    auto b = img_.bytes_from(a);
    std::size_t n = std::min<std::size_t>({b.size(), 15, limit - a});
    std::memcpy(buf.data(), b.data(), n);
    if (!bytes_.empty()) {
      for (auto it = bytes_.lower_bound(a); it != bytes_.end() && it->first < a + n;
           ++it)
        buf[it->first - a] = it->second;
    }
    return {buf.data(), n};
  }

 private:
  const BinaryImage& img_;
  std::map<Addr, std::uint8_t> bytes_;
};

struct RangeOut {
  std::map<Addr, Instruction> insns;
  std::vector<Addr> bad;
  std::vector<Range> excluded;
};

class Sweeper {
 public:
  Sweeper(const BinaryImage& img, SweepPolicy pol, const Decoder& dec)
      : img_(img), pol_(pol), dec_(dec), scratch_(img) {
    for (const auto& s : img.symbols)
      if (s.is_function && s.size > 0) sym_starts_.insert(s.vaddr);
  }

  Scratch& scratch() { return scratch_; }
  std::vector<Range>& patched() { return patched_; }

  Addr resync_after(Addr x, const Range& r) const {
    auto it = sym_starts_.upper_bound(x);
    Addr s = it == sym_starts_.end() ? r.end() : std::min(*it, r.end());
    return std::max(s, x + 1);
  }

  RangeOut sweep(const Range& r) const {
    RangeOut out;
    Addr a = r.start;
    std::array<std::uint8_t, 16> buf{};
    while (a < r.end()) {
      auto bytes = scratch_.fetch(a, r.end(), buf);
      auto res = dec_.decode(bytes, a, img_.mode);
      if (auto* ins = std::get_if<Instruction>(&res)) {
        Addr next = ins->end();
        Instruction copy = std::move(*ins);
        // Keep the original first byte so zero-started padding stays visible
        // after nop substitution.
        auto orig = img_.bytes_from(a);
        if (!orig.empty()) copy.first_byte = orig[0];
        out.insns.emplace(a, std::move(copy));
        a = next;
        continue;
      }
      if (pol_ == SweepPolicy::exclude_region) {
        Addr span_start = r.start;
        for (auto it = out.insns.rbegin(); it != out.insns.rend(); ++it) {
          if (it->second.flow != FlowKind::fallthrough &&
              it->second.flow != FlowKind::cond_jump &&
              !is_call(it->second.flow)) {
            span_start = it->second.end();
            break;
          }
        }
        Addr resync = resync_after(a, r);
        out.insns.erase(out.insns.lower_bound(span_start), out.insns.end());
        out.excluded.push_back({span_start, resync - span_start});
        out.bad.push_back(a);
        a = resync;
        continue;
      }
      if (pol_ == SweepPolicy::psi_repair) {
        if (auto p = patched_before(a, out)) {
          // The error survived a padding repair: treat the bytes after the
          // patched span as non-code up to the next resynchronization point.
          Addr resync = resync_after(a, r);
          out.insns.erase(out.insns.lower_bound(p->end()), out.insns.end());
          a = resync;
          continue;
        }
      }
      out.bad.push_back(a);
      a += 1;
    }
    return out;
  }

 private:
  // A patched padding span that precedes `a` with no control transfer
  // decoded between the span and `a`.
  std::optional<Range> patched_before(Addr a, const RangeOut& out) const {
    for (auto it = patched_.rbegin(); it != patched_.rend(); ++it) {
      if (it->end() > a) continue;
      auto from = out.insns.lower_bound(it->end());
      bool clean = true;
      for (auto j = from; j != out.insns.end() && j->first < a; ++j)
        if (j->second.flow != FlowKind::fallthrough) clean = false;
      if (clean && (from == out.insns.end() || from->first >= it->end()))
        return *it;
    }
    return std::nullopt;
  }

  const BinaryImage& img_;
  SweepPolicy pol_;
  const Decoder& dec_;
  Scratch scratch_;
  std::set<Addr> sym_starts_;
  std::vector<Range> patched_;
};

using ErrKey = std::pair<Addr, SweepCause>;

}  // namespace

std::size_t padding_element(std::span<const std::uint8_t> b) {
  if (b.empty()) return 0;
  std::size_t best = 0;
  for (const auto& n : nop_encodings())
    if (n.size() > best && starts_with(b, n)) best = n.size();
  // Extra 0x66 prefixes in front of the long nopw form.
  if (best == 0 && b[0] == 0x66) {
    std::size_t k = 0;
    while (k < b.size() && b[k] == 0x66) ++k;
    static const std::vector<std::uint8_t> tail = {0x2e, 0x0f, 0x1f, 0x84, 0x00,
                                                   0x00, 0x00, 0x00, 0x00};
    if (starts_with(b.subspan(k), tail)) best = k + tail.size();
  }
  if (best) return best;
  // Other prefixed forms of the multi-byte nop.
  if (b[0] < 0x40 || b[0] > 0x4f) {
    auto res = default_decoder().decode(b, 0, Mode::x64);
    if (auto* ins = std::get_if<Instruction>(&res); ins && ins->op == Op::nop)
      return ins->length;
  }
  if (b[0] == 0x00 || b[0] == 0xcc || b[0] == 0x90) return 1;
  return 0;
}

std::optional<Range> detect_padding(const BinaryImage& image, Addr vaddr) {
  auto b = image.bytes_from(vaddr);
  std::size_t pos = 0;
  while (pos < b.size()) {
    std::size_t n = padding_element(b.subspan(pos));
    if (!n) break;
    pos += n;
  }
  if (pos == 0) return std::nullopt;
  return Range{vaddr, pos};
}

std::vector<SweepError> invalid_transfers(
    const BinaryImage& image, const std::map<Addr, Instruction>& insns) {
  std::vector<SweepError> out;
  for (const auto& [a, ins] : insns) {
    if (!ins.branch_target) continue;
    Addr t = *ins.branch_target;
    if (!image.is_executable(t) || insns.count(t)) continue;
    out.push_back({t, SweepCause::invalid_transfer, false, a});
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return std::tie(x.vaddr, x.source) < std::tie(y.vaddr, y.source);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const auto& x, const auto& y) {
                          return x.vaddr == y.vaddr;
                        }),
            out.end());
  return out;
}

namespace {

bool is_transfer(FlowKind k) {
  return k == FlowKind::jump_direct || k == FlowKind::jump_indirect ||
         k == FlowKind::ret;
}

std::optional<PsiRepair> pad_after(const BinaryImage& image,
                                   const std::map<Addr, Instruction>& insns,
                                   Addr before, bool zero_started) {
  const Section* sec = image.section_at(before);
  if (!sec) return std::nullopt;
  auto it = insns.lower_bound(before);
  while (it != insns.begin()) {
    --it;
    if (it->first < sec->vaddr) return std::nullopt;
    if (!is_transfer(it->second.flow)) continue;
    auto pad = detect_padding(image, it->second.end());
    if (!pad) return std::nullopt;
    if (zero_started && image.bytes_from(pad->start)[0] != 0x00)
      return std::nullopt;
    return PsiRepair{*pad, it->second.end()};
  }
  return std::nullopt;
}

}  // namespace

std::optional<PsiRepair> psi_repair(const BinaryImage& image,
                                    const SweepError& error,
                                    const SweepResult& prior) {
  const auto& insns = prior.instructions;
  if (error.cause == SweepCause::bad_opcode)
    return pad_after(image, insns, error.vaddr, false);

  // Invalid transfer: walk back from the instruction covering the target
  // looking for one whose first byte is zero.
  auto it = insns.lower_bound(error.vaddr);
  std::optional<Addr> zero;
  while (it != insns.begin()) {
    --it;
    const Instruction& ins = it->second;
    if (ins.first_byte == 0x00) {
      zero = ins.vaddr;
      break;
    }
    if (ends_path(ins.flow)) return std::nullopt;
  }
  if (!zero) return std::nullopt;
  auto rep = pad_after(image, insns, *zero, true);
  if (!rep || !rep->padding.contains(*zero)) return std::nullopt;
  return rep;
}

SweepResult linear_sweep(const BinaryImage& image,
                         const std::vector<Range>& ranges, SweepPolicy policy,
                         const Decoder& dec) {
  Sweeper sw(image, policy, dec);
  std::vector<RangeOut> outs;
  outs.reserve(ranges.size());
  for (const auto& r : ranges) outs.push_back(sw.sweep(r));

  auto assemble = [&] {
    SweepResult res;
    for (const auto& o : outs) {
      res.instructions.insert(o.insns.begin(), o.insns.end());
      res.excluded.insert(res.excluded.end(), o.excluded.begin(),
                          o.excluded.end());
    }
    std::sort(res.excluded.begin(), res.excluded.end());
    return res;
  };
  auto current_errors = [&](const SweepResult& res) {
    std::map<ErrKey, SweepError> cur;
    for (const auto& o : outs)
      for (Addr b : o.bad)
        cur[{b, SweepCause::bad_opcode}] = {b, SweepCause::bad_opcode, false, 0};
    if (policy == SweepPolicy::psi_repair)
      for (const auto& e : invalid_transfers(image, res.instructions))
        cur[{e.vaddr, e.cause}] = e;
    return cur;
  };

  SweepResult res = assemble();
  std::map<ErrKey, SweepError> all = current_errors(res);

  if (policy == SweepPolicy::psi_repair) {
    std::set<ErrKey> attempted;
    for (;;) {
      auto next = std::find_if(all.begin(), all.end(), [&](const auto& kv) {
        return !kv.second.repaired && !attempted.count(kv.first);
      });
      if (next == all.end()) break;
      attempted.insert(next->first);
      auto rep = psi_repair(image, next->second, res);
      if (!rep) continue;
      bool seen = std::any_of(sw.patched().begin(), sw.patched().end(),
                              [&](const Range& p) { return p == rep->padding; });
      if (seen) continue;
      sw.scratch().patch(rep->padding);
      sw.patched().push_back(rep->padding);
      Addr lo = rep->padding.start, hi = next->first.first;
      if (hi < lo) std::swap(lo, hi);
      for (std::size_t i = 0; i < ranges.size(); ++i)
        if (ranges[i].start <= hi && ranges[i].end() > lo)
          outs[i] = sw.sweep(ranges[i]);
      res = assemble();
      auto cur = current_errors(res);
      for (auto& [k, e] : all) e.repaired = !cur.count(k);
      for (auto& [k, e] : cur)
        if (!all.count(k)) all[k] = e;
    }
    res.patched = sw.patched();
    std::sort(res.patched.begin(), res.patched.end());
  }
  for (auto& [k, e] : all) res.errors.push_back(e);
  return res;
}

}  // namespace dislab
