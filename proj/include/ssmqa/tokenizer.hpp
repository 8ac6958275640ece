#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ssmqa {

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;
inline constexpr std::int64_t kSosId = 2;
inline constexpr std::int64_t kEosId = 3;
inline constexpr std::int64_t kNumSpecials = 4;
// U+2581 stands for U+0020 inside pieces so decoding is lossless.
inline constexpr std::string_view kSpaceMarker = "▁";
inline constexpr std::string_view kUnkGlyph = "⁇";

class Vocab {
public:
    // Specials are added automatically; `pieces` are the corpus pieces in id
    // order with their training counts.
    static Vocab from_pieces(const std::vector<std::pair<std::string, std::int64_t>>& pieces);

    std::size_t size() const { return pieces_.size(); }
    const std::string& piece(std::int64_t id) const;
    std::int64_t count(std::int64_t id) const;
    std::optional<std::int64_t> find(std::string_view piece) const;
    bool is_special(std::int64_t id) const { return id >= 0 && id < kNumSpecials; }
    // Longest piece length in grapheme clusters; bounds the greedy match.
    std::size_t max_piece_clusters() const { return max_clusters_; }

    // Line format: id<TAB>piece<TAB>count, specials first. Tabs, newlines and
    // backslashes inside pieces are backslash-escaped.
    std::string serialize() const;
    static Vocab parse(std::string_view text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    bool operator==(const Vocab& o) const { return pieces_ == o.pieces_ && counts_ == o.counts_; }

private:
    std::vector<std::string> pieces_;
    std::vector<std::int64_t> counts_;
    std::unordered_map<std::string, std::int64_t> index_;
    std::size_t max_clusters_ = 1;
};

// Candidates are whitespace-delimited units, whitespace pieces (spaces as the
// marker) and, ranked after all of those, the grapheme clusters of units.
// Within a tier: higher count first, then bytewise order. Throws
// std::invalid_argument when target_size <= 4 and ValidationError on an empty
// corpus.
Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t target_size);

struct Encoding {
    std::vector<std::int64_t> ids;
    // Code-point [begin, end) of each token in the input; bounds tokens get
    // empty spans at 0 and at the end.
    std::vector<std::pair<std::size_t, std::size_t>> offsets;
};

// Greedy longest match over grapheme clusters; unmatched clusters become unk.
Encoding encode_with_offsets(std::string_view text, const Vocab& vocab, bool add_bounds = false);
std::vector<std::int64_t> encode(std::string_view text, const Vocab& vocab, bool add_bounds = false);
// Throws std::out_of_range on an id >= V.
std::string decode(const std::vector<std::int64_t>& ids, const Vocab& vocab, bool strip_specials = true);

// The surface string of each non-special token (markers mapped back to spaces).
std::vector<std::string> token_strings(std::string_view text, const Vocab& vocab);

} // namespace ssmqa
