#include "ssmqa/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/serialize.hpp"
#include "ssmqa/unicode.hpp"

namespace ssmqa {

namespace {

const char* const kSpecialNames[] = {"<pad>", "<unk>", "<sos>", "<eos>"};

std::string marked(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == ' ') {
            out += kSpaceMarker;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string unmarked(std::string_view s) {
    std::string out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        if (s.substr(pos, kSpaceMarker.size()) == kSpaceMarker) {
            out.push_back(' ');
            pos += kSpaceMarker.size();
        } else {
            out.push_back(s[pos++]);
        }
    }
    return out;
}

struct Cluster {
    std::string piece; // marker form
    std::size_t cp_begin;
    std::size_t cp_end;
    bool space;
};

std::vector<Cluster> clusters_of(std::string_view text) {
    std::vector<Cluster> out;
    const auto b = unicode::grapheme_boundaries(text);
    std::size_t cp = 0;
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
        const std::string_view c = text.substr(b[i], b[i + 1] - b[i]);
        const std::size_t n = unicode::codepoint_count(c);
        const char32_t head = unicode::decode_utf8(c)[0];
        out.push_back({marked(c), cp, cp + n, unicode::is_whitespace(head)});
        cp += n;
    }
    return out;
}

std::string escape_piece(std::string_view p) {
    std::string out;
    for (char c : p) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape_piece(std::string_view p) {
    std::string out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] != '\\') {
            out.push_back(p[i]);
            continue;
        }
        if (++i >= p.size()) {
            throw ValidationError("vocab: dangling escape");
        }
        switch (p[i]) {
        case '\\': out.push_back('\\'); break;
        case 't': out.push_back('\t'); break;
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        default: throw ValidationError("vocab: unknown escape \\" + std::string(1, p[i]));
        }
    }
    return out;
}

} // namespace

Vocab Vocab::from_pieces(const std::vector<std::pair<std::string, std::int64_t>>& pieces) {
    Vocab v;
    for (const char* s : kSpecialNames) {
        v.pieces_.emplace_back(s);
        v.counts_.push_back(0);
    }
    for (const auto& [p, c] : pieces) {
        if (p.empty()) {
            throw ValidationError("vocab: empty piece");
        }
        v.pieces_.push_back(p);
        v.counts_.push_back(c);
    }
    for (std::size_t i = kNumSpecials; i < v.pieces_.size(); ++i) {
        const auto& p = v.pieces_[i];
        if (!v.index_.emplace(p, static_cast<std::int64_t>(i)).second) {
            throw ValidationError("vocab: duplicate piece '" + p + "'");
        }
        v.max_clusters_ = std::max(v.max_clusters_, unicode::segment_graphemes(unmarked(p)).size());
    }
    return v;
}

const std::string& Vocab::piece(std::int64_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocab of " +
                                std::to_string(pieces_.size()));
    }
    return pieces_[static_cast<std::size_t>(id)];
}

std::int64_t Vocab::count(std::int64_t id) const {
    piece(id);
    return counts_[static_cast<std::size_t>(id)];
}

std::optional<std::int64_t> Vocab::find(std::string_view piece) const {
    const auto it = index_.find(std::string(piece));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string Vocab::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        out += std::to_string(i) + "\t" + escape_piece(pieces_[i]) + "\t" + std::to_string(counts_[i]) + "\n";
    }
    return out;
}

Vocab Vocab::parse(std::string_view text) {
    std::vector<std::pair<std::string, std::int64_t>> pieces;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            eol = text.size();
        }
        const std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) {
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos) {
            throw ValidationError("vocab line " + std::to_string(line_no + 1) + ": expected id<TAB>piece<TAB>count");
        }
        std::int64_t id = 0;
        std::int64_t count = 0;
        try {
            id = std::stoll(std::string(line.substr(0, t1)));
            count = std::stoll(std::string(line.substr(t2 + 1)));
        } catch (const std::exception&) {
            throw ValidationError("vocab line " + std::to_string(line_no + 1) + ": bad number");
        }
        if (id != static_cast<std::int64_t>(line_no)) {
            throw ValidationError("vocab line " + std::to_string(line_no + 1) + ": ids must be dense and ordered");
        }
        const std::string piece = unescape_piece(line.substr(t1 + 1, t2 - t1 - 1));
        if (line_no < static_cast<std::size_t>(kNumSpecials)) {
            if (piece != kSpecialNames[line_no]) {
                throw ValidationError("vocab: special token " + std::to_string(line_no) + " must be " +
                                      kSpecialNames[line_no]);
            }
        } else {
            pieces.emplace_back(piece, count);
        }
        ++line_no;
    }
    if (line_no < static_cast<std::size_t>(kNumSpecials)) {
        throw ValidationError("vocab: missing special tokens");
    }
    return from_pieces(pieces);
}

void Vocab::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Vocab Vocab::load(const std::string& path) {
    const std::string text = read_file(path);
    unicode::validate_utf8(text);
    return parse(text);
}

Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t target_size) {
    if (target_size <= static_cast<std::size_t>(kNumSpecials)) {
        throw std::invalid_argument("vocab size must exceed the 4 special tokens, got " + std::to_string(target_size));
    }
    std::map<std::string, std::int64_t> units;
    std::map<std::string, std::int64_t> clusters;
    bool any_text = false;
    for (const auto& line : corpus) {
        std::string unit;
        std::vector<std::string> unit_clusters;
        auto flush = [&] {
            if (!unit.empty()) {
                any_text = true;
                ++units[unit];
                for (const auto& c : unit_clusters) {
                    ++clusters[c];
                }
            }
            unit.clear();
            unit_clusters.clear();
        };
        for (const auto& c : clusters_of(line)) {
            if (c.space) {
                flush();
                ++units[c.piece];
            } else {
                unit += c.piece;
                unit_clusters.push_back(c.piece);
            }
        }
        flush();
    }
    if (!any_text) {
        throw ValidationError("cannot train a vocab on an empty corpus");
    }
    auto ranked = [](const std::map<std::string, std::int64_t>& m) {
        std::vector<std::pair<std::string, std::int64_t>> v(m.begin(), m.end());
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        return v;
    };
    std::vector<std::pair<std::string, std::int64_t>> chosen;
    std::map<std::string, bool> taken;
    const std::size_t room = target_size - static_cast<std::size_t>(kNumSpecials);
    for (const auto& tier : {ranked(units), ranked(clusters)}) {
        for (const auto& [p, c] : tier) {
            if (chosen.size() >= room) {
                break;
            }
            if (taken.emplace(p, true).second) {
                chosen.emplace_back(p, c);
            }
        }
    }
    return Vocab::from_pieces(chosen);
}

Encoding encode_with_offsets(std::string_view text, const Vocab& vocab, bool add_bounds) {
    const auto cs = clusters_of(text);
    Encoding e;
    const std::size_t total_cp = cs.empty() ? 0 : cs.back().cp_end;
    if (add_bounds) {
        e.ids.push_back(kSosId);
        e.offsets.emplace_back(0, 0);
    }
    const std::size_t max_len = vocab.max_piece_clusters();
    std::size_t i = 0;
    while (i < cs.size()) {
        std::string cand;
        std::size_t best_len = 0;
        std::int64_t best_id = kUnkId;
        for (std::size_t len = 1; len <= max_len && i + len <= cs.size(); ++len) {
            cand += cs[i + len - 1].piece;
            if (const auto id = vocab.find(cand)) {
                best_len = len;
                best_id = *id;
            }
        }
        if (best_len == 0) {
            best_len = 1;
        }
        e.ids.push_back(best_id);
        e.offsets.emplace_back(cs[i].cp_begin, cs[i + best_len - 1].cp_end);
        i += best_len;
    }
    if (add_bounds) {
        e.ids.push_back(kEosId);
        e.offsets.emplace_back(total_cp, total_cp);
    }
    return e;
}

std::vector<std::int64_t> encode(std::string_view text, const Vocab& vocab, bool add_bounds) {
    return encode_with_offsets(text, vocab, add_bounds).ids;
}

std::string decode(const std::vector<std::int64_t>& ids, const Vocab& vocab, bool strip_specials) {
    std::string out;
    for (auto id : ids) {
        const std::string& p = vocab.piece(id);
        if (id == kUnkId) {
            out += kUnkGlyph;
        } else if (vocab.is_special(id)) {
            if (!strip_specials) {
                out += p;
            }
        } else {
            out += unmarked(p);
        }
    }
    return out;
}

std::vector<std::string> token_strings(std::string_view text, const Vocab& vocab) {
    std::vector<std::string> out;
    const auto e = encode_with_offsets(text, vocab, false);
    const auto cps = unicode::decode_utf8(text);
    for (std::size_t k = 0; k < e.ids.size(); ++k) {
        const auto [b, en] = e.offsets[k];
        out.push_back(unicode::encode_utf8(std::u32string_view(cps).substr(b, en - b)));
    }
    return out;
}

} // namespace ssmqa
