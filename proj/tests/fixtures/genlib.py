"""Assemble fixture programs and derive their ground truth.

Instruction boundaries come from objdump over the ranges declared as code.
Xrefs come from the relocations the linker keeps with --emit-relocs.
Edges and call-graph pairs are computed from the instruction list plus the
declared jump tables, tail calls and non-returning functions.
"""

import os
import re
import subprocess
import tempfile

from elftools.elf.elffile import ELFFile
from elftools.elf.constants import SH_FLAGS

X64_ABS = {1: 8, 10: 4, 11: 4}  # R_X86_64_64, _32, _32S
X64_PCREL = {2, 4}  # R_X86_64_PC32, _PLT32
X86_ABS = {1: 4}  # R_386_32
X86_PCREL = {2, 4}


class Fixture:
    def __init__(self, name, asm, mode="x64", layout=None, funcs=(), symbols=None,
                 data=(), pad=(), entry="_start", main=None, nonret=(), tcalls=(),
                 jtabs=(), icalls=(), drop_xrefs=(), extra_xrefs=(), keep_elf=False,
                 note=""):
        self.name = name
        self.asm = asm
        self.mode = mode
        self.layout = layout or [(".text", 0x401000), (".rodata", 0x402000),
                                 (".data", 0x403000)]
        self.funcs = list(funcs)
        # symbols: list of (label, kind) with kind func|obj, or None for funcs.
        self.symbols = symbols
        self.data = list(data)
        self.pad = list(pad)
        self.entry = entry
        self.main = main
        self.nonret = list(nonret)
        self.tcalls = list(tcalls)
        # (site, table_label, width, [target labels])
        self.jtabs = list(jtabs)
        # (site, [target labels]) for indirect calls
        self.icalls = list(icalls)
        self.drop_xrefs = list(drop_xrefs)
        self.extra_xrefs = list(extra_xrefs)
        self.keep_elf = keep_elf
        self.note = note


def run(cmd, **kw):
    return subprocess.run(cmd, check=True, capture_output=True, text=True, **kw).stdout


def build_elf(fx, workdir):
    src = os.path.join(workdir, fx.name + ".s")
    obj = os.path.join(workdir, fx.name + ".o")
    elf = os.path.join(workdir, fx.name + ".elf")
    lds = os.path.join(workdir, fx.name + ".ld")
    # Declared symbols get an ELF type so loaders treat them as functions
    # or objects; other labels stay untyped.
    syms = fx.symbols if fx.symbols is not None else [(f, "func") for f in fx.funcs]
    types = "".join(f".type {s[0]},@{'function' if s[1] == 'func' else 'object'}\n"
                    for s in syms)
    with open(src, "w") as f:
        f.write(fx.asm + "\n" + types + f".globl {fx.entry}\n")
    asflag = "--64" if fx.mode == "x64" else "--32"
    run(["as", asflag, "-o", obj, src])
    lines = ["SECTIONS {"]
    for sec, addr in fx.layout:
        lines.append(f"  {sec} 0x{addr:x} : {{ *({sec}) }}")
    lines.append("  /DISCARD/ : { *(.note*) *(.comment) }")
    lines.append("}")
    with open(lds, "w") as f:
        f.write("\n".join(lines) + "\n")
    emu = "elf_x86_64" if fx.mode == "x64" else "elf_i386"
    run(["ld", "-m", emu, "-q", "-static", "-nostdlib", "--no-relax", "-e", fx.entry,
         "-T", lds, "-o", elf, obj])
    return elf


class Image:
    def __init__(self, path, mode):
        self.path = path
        self.mode = mode
        self.sections = []  # (name, addr, bytes, executable)
        self.labels = {}
        self.relocs = []  # (section addr of P, P, type)
        with open(path, "rb") as f:
            elf = ELFFile(f)
            for s in elf.iter_sections():
                if not s["sh_flags"] & SH_FLAGS.SHF_ALLOC or s["sh_size"] == 0:
                    continue
                if s["sh_type"] == "SHT_NOBITS":
                    continue
                self.sections.append((s.name, s["sh_addr"], s.data(),
                                      bool(s["sh_flags"] & SH_FLAGS.SHF_EXECINSTR)))
            symtab = elf.get_section_by_name(".symtab")
            for sym in symtab.iter_symbols():
                if sym.name and sym["st_info"]["type"] in ("STT_NOTYPE", "STT_FUNC",
                                                           "STT_OBJECT"):
                    if sym["st_shndx"] != "SHN_UNDEF":
                        self.labels[sym.name] = sym["st_value"]
            for rs in elf.iter_sections():
                if rs["sh_type"] not in ("SHT_RELA", "SHT_REL"):
                    continue
                target = elf.get_section(rs["sh_info"])
                if not target["sh_flags"] & SH_FLAGS.SHF_ALLOC:
                    continue
                for r in rs.iter_relocations():
                    self.relocs.append((r["r_offset"], r["r_info_type"]))
        self.sections.sort(key=lambda s: s[1])

    def addr(self, label):
        if isinstance(label, int):
            return label
        m = re.fullmatch(r"([\w.$]+)([+-]\d+)?", label)
        base = self.labels[m.group(1)]
        return base + (int(m.group(2)) if m.group(2) else 0)

    def section_of(self, a):
        for s in self.sections:
            if s[1] <= a < s[1] + len(s[2]):
                return s
        return None

    def executable(self, a):
        s = self.section_of(a)
        return bool(s and s[3])

    def read(self, a, n):
        s = self.section_of(a)
        off = a - s[1]
        return s[2][off:off + n]


BRANCH_RE = re.compile(r"^\s*([0-9a-f]+):\t([0-9a-f ]+)\t(\S+)\s*(.*)$")


def objdump_range(img, lo, hi):
    """Instructions in [lo, hi) as (addr, size, mnemonic, operands)."""
    m = "i386:x86-64" if img.mode == "x64" else "i386"
    out = run(["objdump", "-d", "-w", "--insn-width=16", "-M", "att", "-m", m,
               f"--start-address=0x{lo:x}", f"--stop-address=0x{hi:x}", img.path])
    insns = []
    for line in out.splitlines():
        mm = BRANCH_RE.match(line)
        if not mm:
            continue
        a = int(mm.group(1), 16)
        size = len(mm.group(2).split())
        ops, _, note = mm.group(4).partition("#")
        rip = None
        if "(%rip)" in ops:
            rip = int(note.split()[0], 16)
        insns.append((a, size, mm.group(3), ops.strip(), rip))
    for a, size, mn, ops, _ in insns:
        if mn == "(bad)":
            raise RuntimeError(f"undecodable code at {a:x} in {img.path}")
    return insns


COND = re.compile(r"^j(?!mp)[a-z]+$")


def flow_of(mn, ops):
    base = re.sub(r"^(call|jmp|ret)[qlw]$", r"\1", mn)
    if mn.startswith("ret") or mn in ("repz", "rep") and ops.startswith("ret"):
        return "ret"
    if mn in ("hlt", "ud2"):
        return "halt"
    if base == "call":
        return "icall" if ops.startswith("*") else "call"
    if base == "jmp":
        return "ijmp" if ops.startswith("*") else "jmp"
    if COND.match(mn) or mn in ("loop", "loope", "loopne", "jecxz", "jrcxz"):
        return "jcc"
    return "seq"


def target_of(ops):
    m = re.match(r"([0-9a-f]+)\b", ops)
    return int(m.group(1), 16) if m else None


def ranges_minus(base, cuts):
    out = [base]
    for lo, hi in cuts:
        nxt = []
        for a, b in out:
            if hi <= a or lo >= b:
                nxt.append((a, b))
                continue
            if a < lo:
                nxt.append((a, lo))
            if hi < b:
                nxt.append((hi, b))
        out = nxt
    return [r for r in out if r[1] > r[0]]


def ground_truth(fx, img):
    A = img.addr
    data = [(A(a), A(b)) for a, b in fx.data]
    pad = [(A(a), A(b)) for a, b in fx.pad]
    insns = {}
    rip = {}
    for name, addr, blob, ex in img.sections:
        if not ex:
            continue
        for lo, hi in ranges_minus((addr, addr + len(blob)), data + pad):
            for a, size, mn, ops, r in objdump_range(img, lo, hi):
                if a + size > hi:
                    raise RuntimeError(f"{fx.name}: instruction at {a:x} crosses {hi:x}")
                insns[a] = (size, flow_of(mn, ops), target_of(ops), mn)
                if r is not None:
                    rip[a] = r

    funcs = sorted({A(f) for f in fx.funcs})
    nonret = sorted({A(f) for f in fx.nonret})
    tcalls = sorted({(A(s), A(t)) for s, t in fx.tcalls})
    tc_sites = {s for s, _ in tcalls}
    tables = {}
    for site, tbl, width, targets in fx.jtabs:
        tables[A(site)] = (A(tbl), width, [A(t) for t in targets])
    icalls = {A(s): [A(t) for t in ts] for s, ts in fx.icalls}

    # Xrefs from relocations.
    starts = sorted(insns)

    def containing(p):
        import bisect
        i = bisect.bisect_right(starts, p) - 1
        if i >= 0 and starts[i] <= p < starts[i] + insns[starts[i]][0]:
            return starts[i]
        return None

    absr = X64_ABS if fx.mode == "x64" else X86_ABS
    pcr = X64_PCREL if fx.mode == "x64" else X86_PCREL
    xrefs = set()
    for p, typ in img.relocs:
        ins = containing(p)
        if typ in absr:
            w = absr[typ]
            to = int.from_bytes(img.read(p, w), "little")
            if w == 4 and typ == 11 and to & 0x80000000:
                to |= 0xFFFFFFFF00000000
        elif typ in pcr:
            if ins is None or insns[ins][1] in ("call", "jmp", "jcc"):
                continue
            w = 4
            disp = int.from_bytes(img.read(p, 4), "little", signed=True)
            to = ins + insns[ins][0] + disp
        else:
            continue
        to_code = to in insns
        if ins is not None:
            kind = "c2c" if to_code else "c2d"
            frm = ins
        else:
            kind = "d2c" if to_code else "d2d"
            frm = p
        xrefs.add((kind, frm, to, w))
    # The assembler resolves same-section rip-relative operands without a
    # relocation; objdump's computed target covers those.
    seen = {(x[1], x[2]) for x in xrefs}
    for a, to in rip.items():
        if (a, to) not in seen:
            xrefs.add(("c2c" if to in insns else "c2d", a, to, 4))
    drop = {(k, A(f), A(t)) for k, f, t in fx.drop_xrefs}
    xrefs = {x for x in xrefs if (x[0], x[1], x[2]) not in drop}
    for k, f, t, w in fx.extra_xrefs:
        xrefs.add((k, A(f), A(t), w))

    # Blocks and edges.
    fset = set(funcs)
    leaders = set(fset)
    prev_end = None
    for a in starts:
        size, flow, tgt, _ = insns[a]
        if prev_end != a:
            leaders.add(a)
        prev_end = a + size
        if flow in ("jmp", "jcc", "call") and tgt is not None:
            leaders.add(tgt)
        if flow != "seq":
            leaders.add(a + size)
        if flow == "ijmp" and a in tables:
            leaders.update(tables[a][2])
    edges = set()
    block = None
    for a in starts:
        if a in leaders:
            block = a
        size, flow, tgt, _ = insns[a]
        end = a + size
        succ = []
        if flow == "seq":
            if end in leaders:
                succ = [end]
        elif flow == "jcc":
            succ = [tgt, end]
        elif flow == "jmp":
            if a not in tc_sites:
                succ = [tgt]
        elif flow == "ijmp" and a in tables:
            succ = tables[a][2]
        for s in succ:
            if s in insns:
                edges.add((block, s))

    def owner(a):
        best = None
        for f in funcs:
            if f <= a:
                best = f
        return best

    cg = set()
    for a in starts:
        size, flow, tgt, _ = insns[a]
        callees = []
        if flow == "call":
            callees = [tgt]
        elif flow in ("icall", "ijmp") and a in icalls:
            callees = icalls[a]
        for c in callees:
            o = owner(a)
            if o is not None:
                cg.add((o, c))
    for s, t in tcalls:
        o = owner(s)
        if o is not None:
            cg.add((o, t))

    lines = []
    if fx.main:
        lines.append(f"[main] {A(fx.main):x}")
    for a in starts:
        lines.append(f"[inst] {a:x} {insns[a][0]}")
    for lo, hi in sorted(pad):
        lines.append(f"[pad] {lo:x} {hi - lo}")
    for f in funcs:
        lines.append(f"[func] {f:x}")
    for k, f, t, w in sorted(xrefs, key=lambda x: (x[1], x[2], x[0])):
        lines.append(f"[xref] {k} {f:x} {t:x} {w}")
    for site in sorted(tables):
        base, width, targets = tables[site]
        lines.append(f"[jtab] {site:x} {base:x} {width} " + " ".join(f"{t:x}" for t in targets))
    for a, b in sorted(edges):
        lines.append(f"[edge] {a:x} {b:x}")
    for a, b in sorted(cg):
        lines.append(f"[cg] {a:x} {b:x}")
    for s, t in tcalls:
        lines.append(f"[tcall] {s:x} {t:x}")
    for n in nonret:
        lines.append(f"[noret] {n:x}")
    return "\n".join(lines) + "\n"


def flat_fixture(fx, img):
    lines = [f"# {fx.note}" if fx.note else f"# {fx.name}", f"mode {fx.mode}"]
    for name, addr, blob, ex in img.sections:
        kind = "code" if ex else "data"
        lines.append(f"section {name} {addr:x} {kind} {blob.hex()}")
    syms = fx.symbols if fx.symbols is not None else [(f, "func") for f in fx.funcs]
    fstarts = sorted(img.addr(s[0]) for s in syms if s[1] == "func")
    for sym in syms:
        label, kind = sym[0], sym[1]
        a = img.addr(label)
        if kind == "func":
            sec = img.section_of(a)
            sec_end = sec[1] + len(sec[2])
            if len(sym) > 2:
                end = img.addr(sym[2])
            else:
                later = [s for s in fstarts if s > a and s < sec_end]
                end = later[0] if later else sec_end
            lines.append(f"symbol {label} {a:x} {end - a} func")
        else:
            lines.append(f"symbol {label} {a:x} 8 obj")
    lines.append(f"entry {img.addr(fx.entry):x}")
    return "\n".join(lines) + "\n"


def generate(fx, outdir, elfdir=None):
    with tempfile.TemporaryDirectory() as tmp:
        elf = build_elf(fx, tmp)
        img = Image(elf, fx.mode)
        gt = ground_truth(fx, img)
        fix = flat_fixture(fx, img)
        with open(os.path.join(outdir, fx.name + ".fix"), "w") as f:
            f.write(fix)
        with open(os.path.join(outdir, fx.name + ".gt"), "w") as f:
            f.write(gt)
        if fx.keep_elf and elfdir:
            import shutil
            shutil.copy(elf, os.path.join(elfdir, fx.name + ".elf"))
        return img
