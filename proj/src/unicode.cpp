#include "ssmqa/unicode.hpp"

#include <algorithm>
#include <cstdint>

#include "ssmqa/errors.hpp"

namespace ssmqa::unicode {

namespace {

enum class GraphemeBreak : std::uint8_t {
    Other,
    CR,
    LF,
    Control,
    Extend,
    ZWJ,
    Regional_Indicator,
    Prepend,
    SpacingMark,
    L,
    V,
    T,
    LV,
    LVT
};
enum class IndicConjunct : std::uint8_t { None, Linker, Consonant, Extend };

struct GraphemeBreakRange {
    char32_t lo, hi;
    GraphemeBreak value;
};
struct IndicConjunctRange {
    char32_t lo, hi;
    IndicConjunct value;
};
struct CodeRange {
    char32_t lo, hi;
};
struct CombiningClassRange {
    char32_t lo, hi;
    std::uint8_t ccc;
};
struct CanonicalDecomposition {
    char32_t cp, first, second;
};
struct Composition {
    char32_t a, b, composite;
};

#include "unicode_tables.inc"

template <class R>
const R* find_range(const R* begin, const R* end, char32_t cp) {
    const R* it = std::upper_bound(begin, end, cp, [](char32_t c, const R& r) { return c < r.lo; });
    if (it == begin) {
        return nullptr;
    }
    --it;
    return cp <= it->hi ? it : nullptr;
}

GraphemeBreak gcb(char32_t cp) {
    const auto* r = find_range(std::begin(kGraphemeBreakRanges), std::end(kGraphemeBreakRanges), cp);
    return r ? r->value : GraphemeBreak::Other;
}

IndicConjunct incb(char32_t cp) {
    const auto* r = find_range(std::begin(kIndicConjunctRanges), std::end(kIndicConjunctRanges), cp);
    return r ? r->value : IndicConjunct::None;
}

bool extended_pictographic(char32_t cp) {
    return find_range(std::begin(kExtendedPictographicRanges), std::end(kExtendedPictographicRanges), cp) != nullptr;
}

std::uint8_t ccc(char32_t cp) {
    const auto* r = find_range(std::begin(kCombiningClassRanges), std::end(kCombiningClassRanges), cp);
    return r ? r->ccc : 0;
}

[[noreturn]] void bad(std::size_t pos, const char* what) {
    throw EncodingError("invalid UTF-8 at byte " + std::to_string(pos) + ": " + what);
}

// Decodes one code point at s[pos]; advances pos.
char32_t next_cp(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) {
        ++pos;
        return b0;
    }
    std::size_t len;
    char32_t cp;
    char32_t min;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4, cp = b0 & 0x07, min = 0x10000;
    } else {
        bad(pos, "unexpected lead byte");
    }
    if (pos + len > s.size()) {
        bad(pos, "truncated sequence");
    }
    for (std::size_t i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) {
            bad(pos + i, "expected continuation byte");
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min) {
        bad(pos, "overlong encoding");
    }
    if (cp > 0x10FFFF) {
        bad(pos, "code point above U+10FFFF");
    }
    if (cp >= 0xD800 && cp <= 0xDFFF) {
        bad(pos, "surrogate code point");
    }
    pos += len;
    return cp;
}

// Hangul syllable arithmetic
constexpr char32_t kSBase = 0xAC00, kLBase = 0x1100, kVBase = 0x1161, kTBase = 0x11A7;
constexpr char32_t kLCount = 19, kVCount = 21, kTCount = 28, kNCount = kVCount * kTCount,
                   kSCount = kLCount * kNCount;

void decompose(char32_t cp, std::u32string& out) {
    if (cp >= kSBase && cp < kSBase + kSCount) {
        const char32_t s = cp - kSBase;
        out.push_back(kLBase + s / kNCount);
        out.push_back(kVBase + (s % kNCount) / kTCount);
        if (s % kTCount != 0) {
            out.push_back(kTBase + s % kTCount);
        }
        return;
    }
    const auto* begin = std::begin(kCanonicalDecompositions);
    const auto* end = std::end(kCanonicalDecompositions);
    const auto* it = std::lower_bound(begin, end, cp, [](const CanonicalDecomposition& d, char32_t c) { return d.cp < c; });
    if (it == end || it->cp != cp) {
        out.push_back(cp);
        return;
    }
    decompose(it->first, out);
    if (it->second != 0) {
        decompose(it->second, out);
    }
}

char32_t compose_pair(char32_t a, char32_t b) {
    if (a >= kLBase && a < kLBase + kLCount && b >= kVBase && b < kVBase + kVCount) {
        return kSBase + ((a - kLBase) * kVCount + (b - kVBase)) * kTCount;
    }
    if (a >= kSBase && a < kSBase + kSCount && (a - kSBase) % kTCount == 0 && b > kTBase && b < kTBase + kTCount) {
        return a + (b - kTBase);
    }
    const auto* begin = std::begin(kCompositions);
    const auto* end = std::end(kCompositions);
    const auto* it = std::lower_bound(begin, end, std::pair{a, b}, [](const Composition& c, std::pair<char32_t, char32_t> k) {
        return c.a < k.first || (c.a == k.first && c.b < k.second);
    });
    if (it != end && it->a == a && it->b == b) {
        return it->composite;
    }
    return 0;
}

} // namespace

std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t pos = 0;
    while (pos < s.size()) {
        out.push_back(next_cp(s, pos));
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string encode_utf8(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size() * 3);
    for (char32_t c : cps) {
        append_utf8(out, c);
    }
    return out;
}

void validate_utf8(std::string_view s) {
    std::size_t pos = 0;
    while (pos < s.size()) {
        next_cp(s, pos);
    }
}

std::size_t codepoint_count(std::string_view s) {
    std::size_t n = 0;
    for (char c : s) {
        n += (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }
    return n;
}

bool is_whitespace(char32_t cp) {
    return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
           cp == 0x3000;
}

std::vector<std::size_t> grapheme_boundaries(std::string_view s) {
    std::vector<std::size_t> out;
    if (s.empty()) {
        out.push_back(0);
        return out;
    }
    using G = GraphemeBreak;
    std::size_t pos = 0;
    char32_t prev_cp = next_cp(s, pos);
    G prev = gcb(prev_cp);
    out.push_back(0);
    // 0: none, 1: consonant then extend/linker*, 2: ... with at least one linker
    auto step_conjunct = [](int state, IndicConjunct v) {
        if (v == IndicConjunct::Consonant) {
            return 1;
        }
        if (state >= 1 && v == IndicConjunct::Linker) {
            return 2;
        }
        if (state >= 1 && v == IndicConjunct::Extend) {
            return state;
        }
        return 0;
    };
    int conjunct = step_conjunct(0, incb(prev_cp));
    // 0: none, 1: pictographic then extend*, 2: ... then ZWJ
    int emoji = extended_pictographic(prev_cp) ? 1 : 0;
    int ri_run = prev == G::Regional_Indicator ? 1 : 0;
    while (pos < s.size()) {
        const std::size_t start = pos;
        const char32_t cp = next_cp(s, pos);
        const G cur = gcb(cp);
        bool brk;
        if (prev == G::CR && cur == G::LF) {
            brk = false;
        } else if (prev == G::Control || prev == G::CR || prev == G::LF) {
            brk = true;
        } else if (cur == G::Control || cur == G::CR || cur == G::LF) {
            brk = true;
        } else if (prev == G::L && (cur == G::L || cur == G::V || cur == G::LV || cur == G::LVT)) {
            brk = false;
        } else if ((prev == G::LV || prev == G::V) && (cur == G::V || cur == G::T)) {
            brk = false;
        } else if ((prev == G::LVT || prev == G::T) && cur == G::T) {
            brk = false;
        } else if (cur == G::Extend || cur == G::ZWJ || cur == G::SpacingMark || prev == G::Prepend) {
            brk = false;
        } else if (conjunct == 2 && incb(cp) == IndicConjunct::Consonant) {
            brk = false;
        } else if (emoji == 2 && extended_pictographic(cp)) {
            brk = false;
        } else if (prev == G::Regional_Indicator && cur == G::Regional_Indicator && ri_run % 2 == 1) {
            brk = false;
        } else {
            brk = true;
        }
        if (brk) {
            out.push_back(start);
        }
        conjunct = step_conjunct(conjunct, incb(cp));
        if (extended_pictographic(cp)) {
            emoji = 1;
        } else if (emoji == 1 && cur == G::Extend) {
            emoji = 1;
        } else if (emoji == 1 && cur == G::ZWJ) {
            emoji = 2;
        } else {
            emoji = 0;
        }
        ri_run = cur == G::Regional_Indicator ? ri_run + 1 : 0;
        prev = cur;
    }
    out.push_back(s.size());
    return out;
}

std::vector<std::string> segment_graphemes(std::string_view s) {
    const auto b = grapheme_boundaries(s);
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
        out.emplace_back(s.substr(b[i], b[i + 1] - b[i]));
    }
    return out;
}

std::string nfc(std::string_view s) {
    std::u32string d;
    for (char32_t c : decode_utf8(s)) {
        decompose(c, d);
    }
    // canonical ordering: stable sort each run of non-starters by class
    for (std::size_t i = 0; i < d.size();) {
        if (ccc(d[i]) == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < d.size() && ccc(d[j]) != 0) {
            ++j;
        }
        std::stable_sort(d.begin() + static_cast<std::ptrdiff_t>(i), d.begin() + static_cast<std::ptrdiff_t>(j),
                         [](char32_t a, char32_t b) { return ccc(a) < ccc(b); });
        i = j;
    }
    // canonical composition
    std::u32string out;
    std::size_t starter = std::u32string::npos;
    int last_class = -1;
    for (char32_t c : d) {
        const int cc = ccc(c);
        if (starter != std::u32string::npos) {
            const bool blocked = last_class != -1 && (last_class == 0 || last_class >= cc);
            if (!blocked) {
                if (const char32_t comp = compose_pair(out[starter], c)) {
                    out[starter] = comp;
                    continue;
                }
            }
        }
        if (cc == 0) {
            starter = out.size();
            last_class = -1;
        } else {
            last_class = cc;
        }
        out.push_back(c);
    }
    return encode_utf8(out);
}

} // namespace ssmqa::unicode
