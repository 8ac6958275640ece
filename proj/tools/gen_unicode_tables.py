#!/usr/bin/env python3
"""Generate src/unicode_tables.inc.

Grapheme-break data comes from the `regex` package property engine and
normalization data from `unicodedata2`. Run from the repository root:

    pip install regex unicodedata2
    python3 tools/gen_unicode_tables.py > src/unicode_tables.inc
"""
import sys

import regex
import unicodedata2 as ucd

MAX_CP = 0x110000
ALL = "".join(chr(c) for c in range(MAX_CP) if not 0xD800 <= c <= 0xDFFF)

GCB_VALUES = [
    "CR", "LF", "Control", "Extend", "ZWJ", "Regional_Indicator", "Prepend",
    "SpacingMark", "L", "V", "T", "LV", "LVT",
]
INCB_VALUES = ["Linker", "Consonant", "Extend"]


def runs(pattern):
    out = []
    for m in regex.finditer(pattern + "+", ALL):
        lo, hi = ord(m.group()[0]), ord(m.group()[-1])
        # finditer over the surrogate-free string may glue runs across the gap
        if lo < 0xD800 <= hi:
            out.append((lo, 0xD7FF))
            out.append((0xE000, hi))
        else:
            out.append((lo, hi))
    return out


def emit_ranges(struct, name, entries, enum_prefix):
    entries.sort()
    print(f"constexpr {struct} {name}[] = {{")
    for lo, hi, v in entries:
        print(f"    {{0x{lo:04X}, 0x{hi:04X}, {enum_prefix}{v}}},")
    print("};")
    print()


def main():
    print("// Generated by tools/gen_unicode_tables.py. Do not edit.")
    print(f"// regex {regex.__version__}, UCD {ucd.unidata_version}")
    print()

    gcb = []
    for v in GCB_VALUES:
        for lo, hi in runs(r"\p{Grapheme_Cluster_Break=" + v + "}"):
            gcb.append((lo, hi, v))
    # surrogates are Control
    gcb.append((0xD800, 0xDFFF, "Control"))
    emit_ranges("GraphemeBreakRange", "kGraphemeBreakRanges", gcb, "GraphemeBreak::")

    incb = []
    for v in INCB_VALUES:
        for lo, hi in runs(r"\p{Indic_Conjunct_Break=" + v + "}"):
            incb.append((lo, hi, v))
    emit_ranges("IndicConjunctRange", "kIndicConjunctRanges", incb, "IndicConjunct::")

    print("constexpr CodeRange kExtendedPictographicRanges[] = {")
    for lo, hi in runs(r"\p{Extended_Pictographic}"):
        print(f"    {{0x{lo:04X}, 0x{hi:04X}}},")
    print("};")
    print()

    # canonical combining classes, run-length encoded
    ccc = []
    start = None
    for c in range(MAX_CP):
        v = ucd.combining(chr(c)) if not 0xD800 <= c <= 0xDFFF else 0
        if start is not None and (v != start[1] or c == MAX_CP - 1):
            ccc.append((start[0], c - 1, start[1]))
            start = None
        if v and start is None:
            start = (c, v)
    print("constexpr CombiningClassRange kCombiningClassRanges[] = {")
    for lo, hi, v in ccc:
        print(f"    {{0x{lo:04X}, 0x{hi:04X}, {v}}},")
    print("};")
    print()

    # canonical decompositions (single level; the runtime applies them recursively)
    decomp = []
    for c in range(MAX_CP):
        if 0xD800 <= c <= 0xDFFF or 0xAC00 <= c <= 0xD7A3:
            continue
        d = ucd.decomposition(chr(c))
        if not d or d.startswith("<"):
            continue
        parts = [int(p, 16) for p in d.split()]
        decomp.append((c, parts))
    print("constexpr CanonicalDecomposition kCanonicalDecompositions[] = {")
    for c, parts in decomp:
        second = parts[1] if len(parts) > 1 else 0
        print(f"    {{0x{c:04X}, 0x{parts[0]:04X}, 0x{second:04X}}},")
    print("};")
    print()

    # primary composites: pairs that NFC recomposes
    comps = []
    for c, parts in decomp:
        if len(parts) != 2:
            continue
        if ucd.normalize("NFC", chr(parts[0]) + chr(parts[1])) == chr(c):
            comps.append((parts[0], parts[1], c))
    comps.sort()
    print("constexpr Composition kCompositions[] = {")
    for a, b, c in comps:
        print(f"    {{0x{a:04X}, 0x{b:04X}, 0x{c:04X}}},")
    print("};")


if __name__ == "__main__":
    sys.exit(main())
