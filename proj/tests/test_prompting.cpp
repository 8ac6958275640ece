#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ssmqa/errors.hpp"
#include "ssmqa/prompting.hpp"
#include "ssmqa/unicode.hpp"

using namespace ssmqa;

namespace {

const std::string kData = SSMQA_TEST_DATA;

PromptTemplate one_shot() { return PromptTemplate::load(kData + "/../../configs/prompt_one_shot.txt"); }

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) {
        ++n;
    }
    return n;
}

struct Toy {
    Vocab vocab;
    SsmModel model;
};

Toy toy_model(std::uint64_t seed = 3) {
    Toy t{train_vocab({"राम घर गया", "सीता ने फल खाया", "मी शाळेत जातो"}, 40), {}};
    ModelConfig cfg = ModelConfig::preset("toy");
    cfg.d_model = 16;
    cfg.state_size = 4;
    cfg.max_seq_len = 64;
    cfg.vocab_size = static_cast<int>(t.vocab.size());
    t.model = SsmModel(cfg, seed);
    return t;
}

} // namespace

TEST(PromptTemplate, ParseRoundTripAndValidation) {
    const auto t = one_shot();
    EXPECT_EQ(PromptTemplate::parse(t.serialize()).prompt, t.prompt);
    EXPECT_EQ(PromptTemplate::parse(t.serialize()).example, t.example);
    EXPECT_THROW(PromptTemplate::parse("[system]\nx\n[prompt]\n{examples}{context}{question}\n"), ValidationError);
    EXPECT_THROW(PromptTemplate::parse("[system]\n[example]\n{context}{question}\n[prompt]\n{examples}{context}{question}\n"),
                 ValidationError);
    EXPECT_THROW(PromptTemplate::parse("[system]\n[example]\n{context}{question}{answer}\n[prompt]\n{context}{question}\n"),
                 ValidationError);
}

TEST(RenderPrompt, ZeroOneTwoShots) {
    const auto t = one_shot();
    const std::string ctx = "राम घर गया।";
    const std::string q = "राम कहाँ गया?";
    const auto zero = render_prompt(t, ctx, q, {});
    EXPECT_EQ(count(zero, "उत्तर:"), 1u);
    EXPECT_EQ(zero.find(t.system), 0u);
    // scenario, then the question after it
    EXPECT_LT(zero.find("परिदृश्य: " + ctx), zero.rfind("प्रश्न: " + q));

    const std::vector<Shot> shots{{"सीता ने फल खाया।", "सीता ने क्या खाया?", "फल"}, {"मी शाळेत जातो।", "मी कुठे जातो?", "शाळेत"}};
    const auto one = render_prompt(t, ctx, q, {shots[0]});
    EXPECT_EQ(count(one, "उत्तर:"), 2u);
    EXPECT_NE(one.find("उत्तर: फल\n"), std::string::npos);
    EXPECT_LT(one.find("उत्तर: फल"), one.find("परिदृश्य: " + ctx));

    const auto two = render_prompt(t, ctx, q, shots);
    const auto a = two.find("उत्तर: फल\n");
    const auto b = two.find("उत्तर: शाळेत\n");
    ASSERT_NE(a, std::string::npos);
    ASSERT_NE(b, std::string::npos);
    EXPECT_LT(a, b);
    EXPECT_LT(b, two.find("परिदृश्य: " + ctx));
    EXPECT_LT(two.find(shots[1].context), b);
    EXPECT_GT(two.find(shots[1].context), a);
}

TEST(RenderPrompt, InsertedTextIsNotResubstituted) {
    const auto t = one_shot();
    const auto out = render_prompt(t, "{question}", "क्या?", {});
    EXPECT_NE(out.find("परिदृश्य: {question}"), std::string::npos);
}

TEST(RenderPrompt, ClustersPreservedAndCapacity) {
    auto t = one_shot();
    const std::string ctx = "क्षत्रिय ज्ञान";
    const auto out = render_prompt(t, ctx, "क्या?", {});
    const auto clusters = unicode::segment_graphemes(out);
    const auto inner = unicode::segment_graphemes(ctx);
    std::string joined;
    bool found = false;
    for (std::size_t i = 0; i + inner.size() <= clusters.size() && !found; ++i) {
        found = std::equal(inner.begin(), inner.end(), clusters.begin() + static_cast<std::ptrdiff_t>(i));
    }
    EXPECT_TRUE(found);
    // a template that glues a virama right after the context would fuse clusters
    PromptTemplate bad = t;
    bad.prompt = "{examples}{context}्{question}";
    EXPECT_THROW(render_prompt(bad, "क", "x", {}), ValidationError);
    t.max_shots = 1;
    EXPECT_THROW(render_prompt(t, "क", "x", {{"a", "b", "c"}, {"d", "e", "f"}}), ValidationError);
}

TEST(RenderPrompt, DelimiterCheck) {
    const auto t = one_shot();
    QaRecord ok{"a", "hi", "राम घर गया", "राम कहाँ?", "घर", 4};
    QaRecord bad{"b", "hi", "उत्तर: घर", "कहाँ?", "घर", 7};
    EXPECT_NO_THROW(t.check_delimiters({ok}));
    try {
        t.check_delimiters({ok, bad});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
    }
}

TEST(SelectBest, HandCases) {
    const auto one = select_best(std::vector<std::string>{"दिल्ली"}, {-3.0}, 0.5);
    EXPECT_EQ(one.answer, "दिल्ली");
    const auto maj = select_best(std::vector<std::string>{"दिल्ली", "दिल्ली", "मुंबई"}, {0, 0, 0}, 0.0);
    EXPECT_EQ(maj.index, 0u);
    EXPECT_DOUBLE_EQ(maj.agreement[0], 0.5);
    EXPECT_DOUBLE_EQ(maj.agreement[2], 0.0);
    const auto same = select_best(std::vector<std::string>{"घर", "घर", "घर"}, {-1, -1, -1}, 0.0);
    EXPECT_EQ(same.index, 0u);
    EXPECT_DOUBLE_EQ(same.agreement[1], 1.0);
    // lambda = 1: pure likelihood
    const auto lik = select_best(std::vector<std::string>{"a", "b", "c"}, {-2, -0.5, -1}, 1.0);
    EXPECT_EQ(lik.index, 1u);
    EXPECT_NEAR(lik.score, std::exp(-0.5), 1e-15);
}

TEST(SelectBest, PermutationEquivariant) {
    std::vector<std::string> c{"नई दिल्ली", "दिल्ली", "मुंबई शहर", "दिल्ली शहर"};
    std::vector<double> lp{-1.1, -0.7, -2.0, -0.9};
    const auto base = select_best(c, lp, 0.5);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::string> pc;
        std::vector<double> pl;
        for (auto i : perm) {
            pc.push_back(c[i]);
            pl.push_back(lp[i]);
        }
        EXPECT_EQ(select_best(pc, pl, 0.5).answer, base.answer);
    }
}

TEST(BestSpan, ConstructedLogits) {
    std::vector<double> s(8, 0.0), e(8, 0.0);
    s[2] = 5;
    e[5] = 5;
    auto p = best_span(s, e, 64);
    EXPECT_EQ(p.start, 2);
    EXPECT_EQ(p.end, 5);
    std::vector<double> s2(8, 0.0), e2(8, 0.0);
    s2[6] = 5;
    e2[1] = 5;
    s2[0] = 1;
    p = best_span(s2, e2, 64);
    EXPECT_LE(p.start, p.end);
    EXPECT_EQ(p.start, 0);
    EXPECT_EQ(p.end, 1);
    p = best_span(s, e, 2); // cap forbids (2, 5)
    EXPECT_LE(p.end - p.start, 2);
    EXPECT_THROW(best_span({}, {}, 4), ValidationError);
}

TEST(Generate, GreedyDeterministicAndCaps) {
    auto t = toy_model();
    const auto prompt = encode("राम घर", t.vocab, false);
    std::vector<std::int64_t> p{kSosId};
    p.insert(p.end(), prompt.begin(), prompt.end());
    SelectionConfig cfg;
    cfg.max_tokens = 5;
    const auto a = generate(t.model, p, cfg, t.vocab);
    const auto b = generate(t.model, p, cfg, t.vocab);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].ids, b[0].ids);
    cfg.max_tokens = 1;
    cfg.samples = 3;
    cfg.temperature = 0.8;
    for (const auto& c : generate(t.model, p, cfg, t.vocab)) {
        EXPECT_EQ(c.ids.size() + (c.finished ? 1 : 0), 1u);
    }
    cfg.max_tokens = 64 - static_cast<int>(p.size()) + 1;
    EXPECT_THROW(generate(t.model, p, cfg, t.vocab), ValidationError);
}

TEST(Generate, SeededSamplingReproducible) {
    auto t = toy_model();
    std::vector<std::int64_t> p{kSosId, 4, 5};
    SelectionConfig cfg;
    cfg.samples = 4;
    cfg.temperature = 0.8;
    cfg.max_tokens = 6;
    cfg.seed = 0;
    const auto a = generate(t.model, p, cfg, t.vocab);
    const auto b = generate(t.model, p, cfg, t.vocab);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a[i].ids, b[i].ids);
    }
    const auto sel = select_best(a, t.model, p, cfg);
    EXPECT_LT(sel.index, 4u);
    EXPECT_GE(sel.score, 0.0);
    EXPECT_LE(sel.score, 1.0);
}

TEST(AnswerLogprob, MatchesManualSum) {
    auto t = toy_model();
    std::vector<std::int64_t> p{kSosId, 4, 5};
    std::vector<std::int64_t> ans{6, 7};
    const double lp = answer_logprob(t.model, p, ans);
    EXPECT_LT(lp, 0.0);
    NoGradGuard g;
    std::vector<std::int64_t> ids{kSosId, 4, 5, 6, 7};
    const Tensor logits = t.model.logits(ids, 1, 5, {});
    const auto V = static_cast<std::size_t>(t.model.config().vocab_size);
    double total = 0;
    const std::int64_t targets[3] = {6, 7, kEosId};
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t row = (2 + k) * V;
        double mx = -1e300;
        for (std::size_t v = 0; v < V; ++v) {
            mx = std::max(mx, logits.data()[row + v]);
        }
        double z = 0;
        for (std::size_t v = 0; v < V; ++v) {
            z += std::exp(logits.data()[row + v] - mx);
        }
        total += logits.data()[row + static_cast<std::size_t>(targets[k])] - mx - std::log(z);
    }
    EXPECT_NEAR(lp, total / 3, 1e-12);
}

TEST(PredictSpan, ValidSpanAndErrors) {
    auto t = toy_model();
    QaRecord r{"x", "hi", "सीता ने फल खाया", "सीता ने क्या खाया?", "फल", 8};
    EXPECT_THROW(predict_span(t.model, r, t.vocab), ValidationError);
    t.model.enable_span_head(1);
    EXPECT_THROW(predict_span(t.model, r, t.vocab), ValidationError); // not prepared
    prepare_record(r, t.vocab, 64);
    const auto p = predict_span(t.model, r, t.vocab);
    EXPECT_LE(0, p.start);
    EXPECT_LE(p.start, p.end);
    EXPECT_LT(p.end, r.context_len);
    EXPECT_NE(r.context.find(p.text), std::string::npos);
    const auto batched = predict_spans(t.model, {r, r}, t.vocab);
    EXPECT_EQ(batched[1].start, p.start);
    EXPECT_EQ(batched[1].end, p.end);
}
