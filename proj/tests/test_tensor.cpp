#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ssmqa/errors.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"
#include "ssmqa/tensor.hpp"

using namespace ssmqa;
using ssmqa::testing::grad_check;
using ssmqa::testing::probe;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

} // namespace

TEST(TensorCreate, ZerosOnesAndShapeContract) {
    const Tensor z = Tensor::zeros({2, 2});
    EXPECT_EQ(vec(z), (std::vector<double>{0, 0, 0, 0}));
    EXPECT_EQ(vec(Tensor::ones({3})), (std::vector<double>{1, 1, 1}));
    EXPECT_EQ(Tensor::zeros({0, 5}).numel(), 0u);
    EXPECT_THROW(Tensor::zeros({2, -1}), ShapeError);
    EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(TensorCreate, UniformIsDeterministicPerSeed) {
    const Tensor a = Tensor::uniform({2}, 7);
    const Tensor b = Tensor::uniform({2}, 7);
    EXPECT_EQ(vec(a), vec(b));
    EXPECT_NE(vec(a), vec(Tensor::uniform({2}, 8)));
}

TEST(Matmul, HandValues) {
    const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    const Tensor ones = Tensor::from_values({2, 1}, {1, 1});
    EXPECT_EQ(vec(matmul(a, ones)), (std::vector<double>{3, 7}));
    const Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(vec(matmul(eye, a)), vec(a));
    EXPECT_EQ(vec(matmul(Tensor::zeros({2, 2}), a)), (std::vector<double>{0, 0, 0, 0}));
    EXPECT_THROW(matmul(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST(Matmul, BatchedMatchesPerItem) {
    const Tensor a = Tensor::uniform({3, 2, 4}, 1);
    const Tensor b = Tensor::uniform({3, 4, 5}, 2);
    const Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
    for (int n = 0; n < 3; ++n) {
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 5; ++j) {
                double s = 0;
                for (int k = 0; k < 4; ++k) {
                    s += a[n * 8 + i * 4 + k] * b[n * 20 + k * 5 + j];
                }
                EXPECT_NEAR(c[n * 10 + i * 5 + j], s, 1e-14);
            }
        }
    }
}

TEST(Unary, ClosedForms) {
    const Tensor zero = Tensor::zeros({1});
    EXPECT_DOUBLE_EQ(sigmoid(zero)[0], 0.5);
    EXPECT_NEAR(softplus(zero)[0], 0.693147180559945, 1e-12);
    EXPECT_DOUBLE_EQ(silu(zero)[0], 0.0);
    EXPECT_DOUBLE_EQ(neg(Tensor::ones({1}))[0], -1.0);
    // stable forms at the extremes
    const Tensor big = Tensor::from_values({2}, {800.0, -800.0});
    EXPECT_DOUBLE_EQ(softplus(big)[0], 800.0);
    EXPECT_GE(softplus(big)[1], 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(big)[0], 1.0);
    EXPECT_THROW(exp(big), std::exception);
}

TEST(Softmax, HandValuesAndInvariants) {
    const Tensor x = Tensor::from_values({2}, {0.0, std::log(2.0)});
    const Tensor s = softmax(x, 0);
    EXPECT_NEAR(s[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-15);
    EXPECT_EQ(vec(softmax(Tensor::full({4}, 3.0), 0)), std::vector<double>(4, 0.25));

    const Tensor r = Tensor::uniform({5, 7}, 3, -4, 4);
    const Tensor sr = softmax(r, -1);
    const Tensor shifted = softmax(add(r, Tensor::full({7}, 100.0)), -1);
    for (int i = 0; i < 5; ++i) {
        double total = 0;
        for (int j = 0; j < 7; ++j) {
            total += sr[i * 7 + j];
            EXPECT_NEAR(sr[i * 7 + j], shifted[i * 7 + j], 1e-12);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    // softmax over axis 0 as well
    const Tensor s0 = softmax(r, 0);
    for (int j = 0; j < 7; ++j) {
        double total = 0;
        for (int i = 0; i < 5; ++i) {
            total += s0[i * 7 + j];
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    EXPECT_THROW(softmax(r, 2), ShapeError);
}

TEST(RmsNorm, HandCases) {
    const Tensor g = Tensor::ones({4});
    const Tensor c = rmsnorm(Tensor::full({4}, -3.0), g, 1e-12);
    for (double v : c.data()) {
        EXPECT_NEAR(v, -1.0, 1e-9);
    }
    EXPECT_EQ(vec(rmsnorm(Tensor::zeros({4}), g, 1e-5)), std::vector<double>(4, 0.0));
    const Tensor x = Tensor::uniform({3, 4}, 5);
    const Tensor a = rmsnorm(x, g, 1e-8);
    const Tensor b = rmsnorm(scale(x, 2.0), g, 1e-8);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-6);
    }
    EXPECT_THROW(rmsnorm(x, Tensor::ones({3}), 1e-5), ShapeError);
}

TEST(CrossEntropy, ClosedForms) {
    const std::int64_t v = 6;
    const Tensor uniform = Tensor::zeros({3, v});
    const std::vector<std::int64_t> t{0, 5, 2};
    EXPECT_NEAR(cross_entropy(uniform, t, -100).item(), std::log(6.0), 1e-14);

    Tensor sharp = Tensor::zeros({2, v});
    sharp.mutable_data()[1] = 200.0;
    sharp.mutable_data()[v + 4] = 200.0;
    EXPECT_LT(cross_entropy(sharp, std::vector<std::int64_t>{1, 4}, -100).item(), 1e-12);

    // ignored rows do not count toward the mean
    const std::vector<std::int64_t> partial{0, -100, -100};
    EXPECT_NEAR(cross_entropy(uniform, partial, -100).item(), std::log(6.0), 1e-14);
    const std::vector<std::int64_t> none{-100, -100, -100};
    EXPECT_THROW(cross_entropy(uniform, none, -100), std::invalid_argument);
    EXPECT_THROW(cross_entropy(uniform, std::vector<std::int64_t>{0, 6, 1}, -100), std::out_of_range);
}

TEST(Backward, HandGradients) {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    sum(x).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1}));
    x.zero_grad();
    sum(mul(x, x)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4}));
    // accumulates until zeroed
    sum(mul(x, x)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, 8}));
    EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(Backward, SharedSubgraphReusedTwice) {
    Tensor x = Tensor::from_values({3}, {0.5, -1.0, 2.0});
    x.set_requires_grad(true);
    const Tensor y = silu(x);
    const Tensor loss = sum(add(mul(y, y), y));
    loss.backward();
    for (int i = 0; i < 3; ++i) {
        const double v = x[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        const double f = v * s;
        const double df = s * (1 + v * (1 - s));
        EXPECT_NEAR(x.grad()[i], (2 * f + 1) * df, 1e-12);
    }
    // a second backward on a fresh graph over the same leaf accumulates
    const double before = x.grad()[0];
    sum(y).backward();
    EXPECT_GT(std::abs(x.grad()[0] - before), 0.0);
}

TEST(Tape, TopologicalOrder) {
    Tensor a = Tensor::uniform({2, 3}, 1);
    Tensor b = Tensor::uniform({3, 2}, 2);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const Tensor c = matmul(a, b);
    const Tensor d = add(c, sigmoid(c));
    const Tensor loss = mean(mul(d, d));
    const Tape tape = Tape::build(loss);
    EXPECT_TRUE(tape.is_topological());
    EXPECT_EQ(tape.nodes().back(), loss.impl().get());
}

TEST(NoGrad, SuppressesRecording) {
    Tensor a = Tensor::ones({2});
    a.set_requires_grad(true);
    {
        NoGradGuard guard;
        const Tensor b = mul(a, a);
        EXPECT_FALSE(b.requires_grad());
    }
    EXPECT_TRUE(mul(a, a).requires_grad());
}

TEST(GradCheck, ElementwiseAndMatmul) {
    auto r = grad_check([](const std::vector<Tensor>& in) { return probe(add(mul(in[0], in[1]), sub(in[0], in[1]))); },
                        {Tensor::uniform({3, 4}, 1), Tensor::uniform({3, 4}, 2)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(mul(in[0], in[1])); },
                   {Tensor::uniform({2, 3, 4}, 3), Tensor::uniform({4}, 4)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(matmul(in[0], in[1])); },
                   {Tensor::uniform({2, 3, 4}, 5), Tensor::uniform({4, 5}, 6)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(matmul(in[0], transpose(in[1]))); },
                   {Tensor::uniform({2, 3, 4}, 7), Tensor::uniform({2, 5, 4}, 8)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(scale(reshape(in[0], {6, 2}), -1.5)); },
                   {Tensor::uniform({3, 4}, 9)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, Unary) {
    for (Unary f : {Unary::exp, Unary::sigmoid, Unary::silu, Unary::softplus, Unary::neg}) {
        const auto r = grad_check([f](const std::vector<Tensor>& in) { return probe(map_unary(in[0], f)); },
                                  {Tensor::uniform({2, 5}, 11, -3, 3)});
        EXPECT_LT(r.max_rel_error, kGradTol) << static_cast<int>(f) << " " << r.worst;
    }
}

TEST(GradCheck, SliceSelectEmbedding) {
    const std::vector<std::int64_t> idx{2, 0, 2, 1};
    auto r = grad_check(
        [&](const std::vector<Tensor>& in) { return probe(index_select_last(slice_last(in[0], 1, 4), idx)); },
        {Tensor::uniform({2, 5}, 12)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    const std::vector<std::int64_t> ids{3, 0, 3, 1, 2, 2};
    r = grad_check([&](const std::vector<Tensor>& in) { return probe(embedding(in[0], ids, {2, 3})); },
                   {Tensor::uniform({4, 3}, 13)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    EXPECT_THROW(embedding(Tensor::zeros({4, 3}), std::vector<std::int64_t>{4}, {1}), std::out_of_range);
}

TEST(GradCheck, SoftmaxRmsnormLosses) {
    auto r = grad_check([](const std::vector<Tensor>& in) { return probe(softmax(in[0], -1)); },
                        {Tensor::uniform({3, 5}, 14, -2, 2)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(softmax(in[0], 0)); },
                   {Tensor::uniform({3, 5}, 15, -2, 2)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return probe(rmsnorm(in[0], in[1], 1e-5)); },
                   {Tensor::uniform({3, 6}, 16), Tensor::uniform({6}, 17, 0.5, 1.5)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    const std::vector<std::int64_t> t{1, -1, 4, 0};
    r = grad_check([&](const std::vector<Tensor>& in) { return cross_entropy(in[0], t, -1); },
                   {Tensor::uniform({4, 5}, 18, -2, 2)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    const std::vector<double> w{0.25, 0.0, 0.5, 0.125};
    r = grad_check([&](const std::vector<Tensor>& in) { return cross_entropy(in[0], t, -1, w); },
                   {Tensor::uniform({4, 5}, 19, -2, 2)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
    r = grad_check([](const std::vector<Tensor>& in) { return mean(mul(in[0], in[0])); },
                   {Tensor::uniform({2, 3}, 20)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, CausalConv) {
    const auto r = grad_check(
        [](const std::vector<Tensor>& in) { return probe(causal_conv1d(in[0], in[1], in[2])); },
        {Tensor::uniform({2, 6, 3}, 21), Tensor::uniform({4, 3}, 22), Tensor::uniform({3}, 23)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(CausalConv, TapAlignment) {
    // single channel, weights [1, 10, 100]: y_t = x_{t-2} + 10 x_{t-1} + 100 x_t
    const Tensor x = Tensor::from_values({4, 1}, {1, 2, 3, 4});
    const Tensor w = Tensor::from_values({3, 1}, {1, 10, 100});
    const Tensor y = causal_conv1d(x, w, Tensor::zeros({1}));
    EXPECT_EQ(vec(y), (std::vector<double>{100, 210, 321, 432}));
}

TEST(Dropout, InvertedScalingAndEvalIdentity) {
    Rng rng(5);
    const Tensor x = Tensor::ones({1000});
    const Tensor y = dropout(x, 0.25, rng, true);
    std::size_t kept = 0;
    for (double v : y.data()) {
        if (v != 0.0) {
            EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
            ++kept;
        }
    }
    EXPECT_GT(kept, 650u);
    EXPECT_LT(kept, 850u);
    EXPECT_EQ(vec(dropout(x, 0.25, rng, false)), vec(x));
    EXPECT_THROW(dropout(x, 1.0, rng, true), std::invalid_argument);
}

TEST(Determinism, SameSeedSameBits) {
    auto run = [] {
        const Tensor a = Tensor::normal({4, 8}, 42, 1.0);
        const Tensor b = Tensor::uniform({8, 3}, 43);
        return vec(softmax(matmul(silu(a), b), -1));
    };
    EXPECT_EQ(run(), run());
}
