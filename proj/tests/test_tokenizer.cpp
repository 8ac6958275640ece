#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ssmqa/errors.hpp"
#include "ssmqa/tokenizer.hpp"
#include "ssmqa/unicode.hpp"

using namespace ssmqa;

namespace {

std::vector<std::string> fixture_lines() {
    std::ifstream in(std::string(SSMQA_TEST_DATA) + "/devanagari_corpus.txt");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        lines.push_back(line);
    }
    return lines;
}

} // namespace

TEST(Vocab, HandExample) {
    const Vocab v = train_vocab({"अब अब क"}, 7);
    ASSERT_EQ(v.size(), 7u);
    EXPECT_EQ(v.piece(0), "<pad>");
    EXPECT_EQ(v.piece(1), "<unk>");
    EXPECT_EQ(v.piece(2), "<sos>");
    EXPECT_EQ(v.piece(3), "<eos>");
    EXPECT_EQ(v.piece(4), "अब");
    EXPECT_EQ(v.count(4), 2);
    EXPECT_TRUE(v.find("क").has_value());
    EXPECT_TRUE(v.find(kSpaceMarker).has_value());
    EXPECT_FALSE(v.find("अ").has_value());
}

TEST(Vocab, SinglePieceCorpusAndErrors) {
    const Vocab v = train_vocab({"नमस्ते", "नमस्ते"}, 5);
    EXPECT_EQ(v.size(), 5u);
    EXPECT_EQ(v.piece(4), "नमस्ते");
    EXPECT_THROW(train_vocab({"क"}, 4), std::invalid_argument);
    EXPECT_THROW(train_vocab({}, 10), ValidationError);
    EXPECT_THROW(train_vocab({"", "   "}, 10), ValidationError);
}

TEST(Vocab, DeterministicBytesAndFileRoundTrip) {
    const auto lines = fixture_lines();
    const Vocab a = train_vocab(lines, 300);
    const Vocab b = train_vocab(lines, 300);
    EXPECT_EQ(a.serialize(), b.serialize());
    const auto path = std::filesystem::temp_directory_path() / "ssmqa_vocab_test.tsv";
    a.save(path.string());
    const Vocab c = Vocab::load(path.string());
    EXPECT_EQ(a, c);
    std::filesystem::remove(path);
    // escapes survive
    const Vocab tabbed = train_vocab({"a\tb\\c\nd"}, 50);
    EXPECT_EQ(Vocab::parse(tabbed.serialize()), tabbed);
    EXPECT_THROW(Vocab::parse("0\t<pad>\t0\n2\tx\t1\n"), ValidationError);
    EXPECT_THROW(Vocab::parse("0\tfoo\t0\n"), ValidationError);
}

TEST(Vocab, PiecesNeverSplitClusters) {
    const Vocab v = train_vocab(fixture_lines(), 400);
    for (std::size_t id = kNumSpecials; id < v.size(); ++id) {
        std::string surface = v.piece(static_cast<std::int64_t>(id));
        // every piece is a whole number of clusters of itself
        const auto clusters = unicode::segment_graphemes(surface);
        std::string joined;
        for (const auto& c : clusters) {
            joined += c;
        }
        EXPECT_EQ(joined, surface);
    }
}

TEST(Encode, BoundsUnkAndRoundTrip) {
    const Vocab v = train_vocab({"नमस्ते दुनिया", "नमस्ते"}, 64);
    EXPECT_EQ(encode("", v, true), (std::vector<std::int64_t>{kSosId, kEosId}));
    EXPECT_EQ(decode(encode("नमस्ते", v), v), "नमस्ते");
    EXPECT_EQ(decode(encode("नमस्ते दुनिया", v), v), "नमस्ते दुनिया");
    // "क" never appeared: one unk for the unseen cluster
    const auto ids = encode("क", v);
    EXPECT_EQ(ids, (std::vector<std::int64_t>{kUnkId}));
    EXPECT_EQ(decode(ids, v), "⁇");
    EXPECT_EQ(decode({kPadId, kPadId}, v, true), "");
    EXPECT_EQ(decode({kSosId, kEosId}, v, false), "<sos><eos>");
    EXPECT_THROW(decode({static_cast<std::int64_t>(v.size())}, v), std::out_of_range);
}

TEST(Encode, GreedyLongestMatchPrefersUnits) {
    const Vocab v = train_vocab({"कल कल", "काल"}, 64);
    const auto ids = encode("कल काल", v);
    ASSERT_EQ(ids.size(), 3u);
    EXPECT_EQ(v.piece(ids[0]), "कल");
    EXPECT_EQ(v.piece(ids[2]), "काल");
    // a unit not in the vocab falls back to its clusters
    const auto split = encode("लक", v);
    EXPECT_EQ(split.size(), 2u);
    EXPECT_EQ(decode(split, v), "लक");
}

TEST(Encode, OffsetsAreCodePointSpans) {
    const Vocab v = train_vocab({"कि अब"}, 64);
    const auto e = encode_with_offsets("कि अब", v, true);
    ASSERT_EQ(e.ids.size(), 5u);
    EXPECT_EQ(e.offsets[0], (std::pair<std::size_t, std::size_t>{0, 0}));
    EXPECT_EQ(e.offsets[1], (std::pair<std::size_t, std::size_t>{0, 2}));
    EXPECT_EQ(e.offsets[2], (std::pair<std::size_t, std::size_t>{2, 3}));
    EXPECT_EQ(e.offsets[3], (std::pair<std::size_t, std::size_t>{3, 5}));
    EXPECT_EQ(e.offsets[4], (std::pair<std::size_t, std::size_t>{5, 5}));
    EXPECT_EQ(token_strings("कि अब", v), (std::vector<std::string>{"कि", " ", "अब"}));
}

TEST(Encode, FixtureCorpusProperties) {
    const auto lines = fixture_lines();
    ASSERT_EQ(lines.size(), 1000u);
    const Vocab v = train_vocab(lines, 100000);
    for (const auto& line : lines) {
        const auto ids = encode(line, v, true);
        ASSERT_EQ(decode(ids, v), line);
        EXPECT_LE(ids.size(), unicode::segment_graphemes(line).size() + 2);
        // token boundaries are cluster boundaries
        const auto e = encode_with_offsets(line, v);
        const auto cps = unicode::decode_utf8(line);
        std::vector<std::size_t> cluster_cp{0};
        for (const auto& c : unicode::segment_graphemes(line)) {
            cluster_cp.push_back(cluster_cp.back() + unicode::codepoint_count(c));
        }
        for (const auto& [b, en] : e.offsets) {
            ASSERT_TRUE(std::binary_search(cluster_cp.begin(), cluster_cp.end(), b));
            ASSERT_TRUE(std::binary_search(cluster_cp.begin(), cluster_cp.end(), en));
        }
    }
}
