#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ssmqa/metrics.hpp"
#include "ssmqa/unicode.hpp"

using namespace ssmqa;

namespace {

// one-hot rows keyed by whitespace token, so distinct words are orthogonal
TokenEmbedder one_hot_embedder() {
    return [](const std::string& text) {
        static std::map<std::string, std::size_t> index;
        std::vector<std::vector<double>> rows;
        for (const auto& w : word_tokens(text)) {
            const auto it = index.emplace(w, index.size()).first;
            std::vector<double> v(64, 0.0);
            v[it->second % 64] = 1.0;
            rows.push_back(v);
        }
        return rows;
    };
}

std::string random_text(std::mt19937_64& rng) {
    static const std::vector<std::string> words{"दिल्ली", "मुंबई", "नदी", "राम", "घर", "पानी", "a", "b", "क्षेत्र", "१९४७"};
    std::string s;
    const std::size_t n = 1 + rng() % 6;
    for (std::size_t i = 0; i < n; ++i) {
        s += (i ? " " : "") + words[rng() % words.size()];
    }
    return s;
}

} // namespace

TEST(Normalize, Rules) {
    EXPECT_EQ(normalize(" दिल्ली।"), "दिल्ली");
    EXPECT_EQ(normalize("दिल्ली"), "दिल्ली");
    EXPECT_EQ(normalize("  नई   दिल्ली , भारत ॥ "), "नई दिल्ली भारत");
    EXPECT_EQ(normalize("a.b!"), "ab");
    EXPECT_EQ(normalize(""), "");
    // decomposed nukta form composes where NFC allows; क़ stays decomposed (exclusion)
    EXPECT_EQ(normalize("क़"), "क़");
    EXPECT_EQ(normalize("é"), "é");
}

TEST(Normalize, Idempotent) {
    std::mt19937_64 rng(11);
    const std::vector<std::string> extras{" ", "।", ",", "  ", "?", "॥", "\t"};
    for (int i = 0; i < 200; ++i) {
        std::string s = extras[rng() % extras.size()] + random_text(rng) + extras[rng() % extras.size()] +
                        random_text(rng) + extras[rng() % extras.size()];
        const auto once = normalize(s);
        EXPECT_EQ(normalize(once), once) << s;
    }
}

TEST(ExactMatch, Cases) {
    EXPECT_EQ(exact_match("दिल्ली", "दिल्ली"), 1.0);
    EXPECT_EQ(exact_match("दिल्ली। ", "दिल्ली"), 1.0);
    EXPECT_EQ(exact_match("मुंबई", "दिल्ली"), 0.0);
}

TEST(TokenF1, HandValues) {
    EXPECT_NEAR(token_f1("a b", "b c"), 0.5, 1e-12);
    EXPECT_EQ(token_f1("राम घर", "राम घर"), 1.0);
    EXPECT_EQ(token_f1("", "राम"), 0.0);
    EXPECT_EQ(token_f1("", ""), 1.0);
    // multiset overlap: duplicates count once per gold occurrence
    EXPECT_NEAR(token_f1("a a b", "a b"), 2 * (2.0 / 3) * 1.0 / (2.0 / 3 + 1.0), 1e-12);
}

TEST(Bleu, HandValues) {
    EXPECT_NEAR(bleu("a b c", "a b c d"), std::exp(1.0 - 4.0 / 3.0), 1e-12);
    EXPECT_NEAR(bleu("a b c", "a b c d"), 0.7165, 1e-4);
    EXPECT_EQ(bleu("a b c d", "a b c d"), 1.0);
    EXPECT_EQ(bleu("", "a"), 0.0);
    EXPECT_EQ(bleu("x y", "a b"), 0.0);
    // three orders for a 3-token prediction; no shared trigram gives 0
    EXPECT_EQ(bleu("a b z", "a b"), 0.0);
    // two orders: unigram 2/3, bigram 1/2, no brevity penalty
    EXPECT_NEAR(bleu("a b z", "a b", 2), std::sqrt(2.0 / 3 * 0.5), 1e-12);
    EXPECT_NEAR(bleu("a b", "a b c"), std::exp(1.0 - 1.5), 1e-12);
}

TEST(RougeL, HandValues) {
    EXPECT_NEAR(rouge_l("a c", "a b c"), 0.8, 1e-12);
    EXPECT_EQ(rouge_l("a b c", "a b c"), 1.0);
    EXPECT_EQ(rouge_l("x", "a b"), 0.0);
    EXPECT_NEAR(rouge_n("a b c", "a b d", 1), 2.0 / 3, 1e-12);
    EXPECT_NEAR(rouge_n("a b c", "a b d", 2), 0.5, 1e-12);
}

TEST(EmbedScore, OrthogonalAndSymmetric) {
    const auto e = one_hot_embedder();
    EXPECT_NEAR(embed_score("राम घर", "राम घर", e), 1.0, 1e-12);
    EXPECT_EQ(embed_score("राम", "घर", e), 0.0);
    EXPECT_EQ(embed_score("", "घर", e), 0.0);
    EXPECT_NEAR(embed_score("राम घर नदी", "घर", e), embed_score("घर", "राम घर नदी", e), 1e-12);
    EXPECT_NEAR(embed_score("राम घर नदी", "घर", e), 2 * (1.0 / 3) / (1.0 / 3 + 1.0), 1e-12);
}

TEST(EmbedScore, ModelEmbedderReflexive) {
    const Vocab v = train_vocab({"राम घर गया", "सीता ने फल खाया"}, 40);
    ModelConfig cfg = ModelConfig::preset("toy");
    cfg.vocab_size = static_cast<std::int64_t>(v.size());
    const SsmModel m(cfg, 5);
    const auto e = model_embedder(m, v);
    EXPECT_NEAR(embed_score("राम घर", "राम घर", e), 1.0, 1e-9);
    const double s = embed_score("राम घर", "सीता फल", e);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
}

TEST(Metrics, ReflexiveOnRandomStrings) {
    std::mt19937_64 rng(5);
    const auto e = one_hot_embedder();
    for (int i = 0; i < 100; ++i) {
        const auto x = random_text(rng);
        EXPECT_EQ(exact_match(x, x), 1.0);
        EXPECT_EQ(token_f1(x, x), 1.0);
        EXPECT_NEAR(bleu(x, x), 1.0, 1e-12);
        EXPECT_EQ(rouge_l(x, x), 1.0);
        EXPECT_NEAR(embed_score(x, x, e), 1.0, 1e-12);
    }
}

TEST(Metrics, RangeAndRecallMonotone) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        const auto p = random_text(rng);
        const auto g = random_text(rng);
        for (double m : {token_f1(p, g), bleu(p, g), rouge_l(p, g), exact_match(p, g)}) {
            EXPECT_GE(m, 0.0);
            EXPECT_LE(m, 1.0);
        }
    }
    // recall component of F1 never grows when a matched token is deleted
    auto recall = [](const std::vector<std::string>& p, const std::vector<std::string>& g) {
        std::map<std::string, int> cg;
        for (const auto& w : g) {
            ++cg[w];
        }
        int m = 0;
        for (const auto& w : p) {
            if (cg[w]-- > 0) {
                ++m;
            }
        }
        return static_cast<double>(m) / static_cast<double>(g.size());
    };
    for (int i = 0; i < 100; ++i) {
        auto p = word_tokens(random_text(rng));
        const auto g = word_tokens(random_text(rng));
        const double before = recall(p, g);
        p.erase(p.begin() + static_cast<std::ptrdiff_t>(rng() % p.size()));
        EXPECT_LE(recall(p, g), before);
    }
}

TEST(Metrics, VocabTokenizer) {
    const Vocab v = train_vocab({"नई दिल्ली भारत", "नई दिल्ली"}, 30);
    const auto tok = vocab_tokenizer(v);
    EXPECT_EQ(token_f1("नई दिल्ली", "नई दिल्ली।", tok), 1.0);
    EXPECT_FALSE(tok("नई दिल्ली").empty());
}

TEST(Report, MeansAndFiles) {
    const std::vector<MetricSample> s{{"1", "hi", "दिल्ली", "दिल्ली"}, {"2", "hi", "मुंबई", "दिल्ली"},
                                      {"3", "mr", "नदी घर", "नदी"}};
    MetricOptions opt;
    opt.embedder = one_hot_embedder();
    opt.rouge_n = true;
    const auto rep = score_samples(s, opt);
    EXPECT_DOUBLE_EQ(rep.corpus.at("hi").em, 0.5);
    EXPECT_EQ(rep.corpus.at("all").count, 3);
    for (const char* lang : {"hi", "mr", "all"}) {
        double f1 = 0, n = 0;
        for (const auto& r : rep.rows) {
            if (r.lang == lang || std::string(lang) == "all") {
                f1 += r.f1;
                ++n;
            }
        }
        EXPECT_NEAR(rep.corpus.at(lang).f1, f1 / n, 1e-12);
    }
    const auto single = score_samples({s[2]}, opt);
    EXPECT_EQ(single.corpus.at("mr").bleu, single.rows[0].bleu);
    const auto j = rep.to_json();
    for (const char* k : {"em", "f1", "bleu", "rouge_l", "embed"}) {
        EXPECT_TRUE(j["corpus"]["hi"].contains(k)) << k;
        EXPECT_TRUE(j["per_sample"][0].contains(k)) << k;
    }
    const auto dir = std::filesystem::temp_directory_path() / "ssmqa_metrics";
    std::filesystem::create_directories(dir);
    rep.write((dir / "report").string());
    EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "report_corpus.csv"));
    EXPECT_THROW(score_samples({}, opt), std::invalid_argument);
}
