#include <gtest/gtest.h>

#include <cmath>

#include "ssmqa/errors.hpp"
#include "ssmqa/lora.hpp"
#include "ssmqa/model.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"

using namespace ssmqa;

TEST(Lora, ZeroInitIsExactIdentity) {
    const Tensor w = Tensor::uniform({5, 3}, 1);
    const LoraAdapter ad = make_adapter("w", 5, 3, LoraConfig::defaults(), 2);
    for (double b : ad.b.data()) {
        EXPECT_EQ(b, 0.0);
    }
    const Tensor x = Tensor::uniform({2, 4, 5}, 3);
    const Tensor base = matmul(x, w);
    Rng rng(1);
    const Tensor y = lora_forward(x, w, ad, true, &rng);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        EXPECT_EQ(y[i], base[i]);
    }
    const Tensor merged = lora_merge(w, ad);
    for (std::size_t i = 0; i < w.numel(); ++i) {
        EXPECT_EQ(merged[i], w[i]);
    }
}

TEST(Lora, HandComputedScale) {
    // r=8 with alpha 32 -> scale 4; only the first rank row is nonzero
    LoraAdapter ad = make_adapter("w", 2, 2, {8, 32.0, 0.0}, 0);
    std::vector<double> a(16, 0.0), b(16, 0.0);
    a[0] = 1.0; // A[0] = [1, 0]
    b[0] = 1.0; // B[:, 0] = [1, 0]
    ad.a = Tensor::from_values({8, 2}, a);
    ad.b = Tensor::from_values({2, 8}, b);
    EXPECT_DOUBLE_EQ(ad.scale(), 4.0);
    const Tensor y = lora_forward(Tensor::from_values({1, 2}, {1, 2}), Tensor::zeros({2, 2}), ad, false, nullptr);
    EXPECT_DOUBLE_EQ(y[0], 4.0);
    EXPECT_DOUBLE_EQ(y[1], 0.0);
    EXPECT_DOUBLE_EQ(make_adapter("w", 2, 2, {1, 32.0, 0.0}, 0).scale(), 32.0);
}

TEST(Lora, RankMismatchThrows) {
    LoraAdapter ad = make_adapter("w", 3, 2, LoraConfig::defaults(), 0);
    ad.rank = 4;
    EXPECT_THROW(lora_forward(Tensor::zeros({1, 3}), Tensor::zeros({3, 2}), ad, false, nullptr), ShapeError);
    const LoraAdapter ok = make_adapter("w", 3, 2, LoraConfig::defaults(), 0);
    EXPECT_THROW(lora_forward(Tensor::zeros({1, 4}), Tensor::zeros({4, 2}), ok, false, nullptr), ShapeError);
    EXPECT_THROW(make_adapter("w", 3, 2, {0, 32.0, 0.1}, 0), std::invalid_argument);
}

TEST(Lora, MergeMatchesAdapterForwardAndUnmerges) {
    LoraAdapter ad = make_adapter("w", 6, 4, LoraConfig::defaults(), 0);
    ad.b = Tensor::uniform({4, 8}, 9);
    const Tensor w = Tensor::uniform({6, 4}, 1);
    const Tensor x = Tensor::uniform({3, 6}, 2);
    const Tensor y = lora_forward(x, w, ad, false, nullptr);
    const Tensor merged = lora_merge(w, ad);
    const Tensor ym = matmul(x, merged);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        EXPECT_NEAR(y[i], ym[i], 1e-6);
    }
    const Tensor back = lora_unmerge(merged, ad);
    for (std::size_t i = 0; i < w.numel(); ++i) {
        EXPECT_NEAR(back[i], w[i], 1e-7);
    }
}

TEST(Lora, TargetEnumeration) {
    ModelConfig c;
    c.n_layers = 2;
    EXPECT_EQ(select_target_layers(c),
              (std::vector<std::string>{"embed", "layer0.in_proj", "layer0.out_proj", "layer1.in_proj",
                                        "layer1.out_proj"}));
    c.variant = BlockVariant::swa_hybrid;
    EXPECT_EQ(select_target_layers(c),
              (std::vector<std::string>{"embed", "layer0.in_proj", "layer0.out_proj", "layer1.q_proj",
                                        "layer1.k_proj", "layer1.v_proj", "layer1.o_proj"}));
    c.n_layers = 0;
    EXPECT_EQ(select_target_layers(c), (std::vector<std::string>{"embed"}));
}

TEST(Lora, SelectFreezesBaseAndAttachMatchesShapes) {
    ModelConfig c;
    c.d_model = 8;
    c.vocab_size = 20;
    SsmModel m(c, 1);
    for (const auto& [_, t] : m.named_parameters()) {
        t.impl()->requires_grad = true;
    }
    const auto targets = select_target_layers(m);
    for (const auto& [name, t] : m.named_parameters()) {
        EXPECT_FALSE(t.requires_grad()) << name;
    }
    const AdapterSet set = attach_adapters(m, targets, LoraConfig::defaults(), 3);
    EXPECT_EQ(set.size(), targets.size());
    const LoraAdapter* emb = set.find("embed");
    ASSERT_NE(emb, nullptr);
    EXPECT_EQ(emb->d_in(), 20);
    EXPECT_EQ(emb->d_out(), 8);
    EXPECT_EQ(set.find("layer1.in_proj")->d_out(), 32);
    EXPECT_EQ(set.named_parameters().front().first, "adapters/embed/A");
}

TEST(Lora, EmbeddingDeltaShiftsLookups) {
    ModelConfig c;
    c.d_model = 4;
    c.vocab_size = 9;
    c.n_layers = 1;
    SsmModel m(c, 2);
    AdapterSet set = attach_adapters(m, {"embed"}, LoraConfig::defaults(), 4);
    LoraAdapter ad = *set.find("embed");
    ad.b = Tensor::uniform({4, 8}, 5);
    set.add(ad);
    ForwardContext ctx;
    ctx.adapters = &set;
    const Tensor eff = m.embedding_table(ctx);
    const Tensor expect = lora_merge(m.parameter("embed"), ad);
    for (std::size_t i = 0; i < eff.numel(); ++i) {
        EXPECT_NEAR(eff[i], expect[i], 1e-12);
    }
}
