#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradfeat/error.hpp"
#include "gradfeat/ops.hpp"
#include "gradfeat/tensor.hpp"

using namespace gradfeat;

namespace {

Tensor randn(Shape s, std::uint64_t seed, float sd = 1.0f) {
    Tensor t(std::move(s));
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, sd);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

// Seven nested loops, 64-bit accumulation.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride, std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> y(N * K * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < OH; ++i)
                for (std::size_t j = 0; j < OW; ++j) {
                    double acc = b ? (*b)[k] : 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long r = long(i * stride + u) - long(pad), q = long(j * stride + v) - long(pad);
                                if (r < 0 || q < 0 || r >= long(H) || q >= long(W)) continue;
                                acc += double(w[((k * C + c) * kh + u) * kw + v]) *
                                       x[((n * C + c) * H + std::size_t(r)) * W + std::size_t(q)];
                            }
                    y[((n * K + k) * OH + i) * OW + j] = acc;
                }
    return y;
}

} // namespace

TEST(Tensor, RejectsSizeMismatchAndZeroDims) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
    EXPECT_THROW(Tensor({2, 0}), DimensionError);
    Tensor t({2, 3}, 1.5f);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_THROW(t.reshaped({4}), DimensionError);
    EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, RowsAndChecksum) {
    Tensor t({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.slice_rows(1, 3), Tensor({2, 2}, {3, 4, 5, 6}));
    const std::vector<std::size_t> rows{2, 0};
    EXPECT_EQ(t.gather_rows(rows), Tensor({2, 2}, {5, 6, 1, 2}));
    Tensor u = t;
    EXPECT_EQ(checksum(t), checksum(u));
    u[0] = 1.0000001f;
    EXPECT_NE(checksum(t), checksum(u));
}

TEST(Conv2d, ScalarKernel) {
    const Tensor x({1, 1, 3, 3}, 1.0f);
    const Tensor w({1, 1, 1, 1}, {2.0f});
    const Tensor b({1}, {0.0f});
    EXPECT_EQ(ops::conv2d(x, w, &b), Tensor({1, 1, 3, 3}, 2.0f));
}

TEST(Conv2d, ZeroKernelGivesBias) {
    const Tensor x = randn({2, 3, 5, 5}, 1);
    const Tensor w({2, 3, 3, 3});
    const Tensor b({2}, {0.25f, -1.5f});
    const Tensor y = ops::conv2d(x, w, &b, {1, 1});
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], (i / 25) % 2 == 0 ? 0.25f : -1.5f);
}

TEST(Conv2d, MatchesNaiveLoops) {
    const Tensor x = randn({2, 3, 8, 8}, 2), w = randn({4, 3, 3, 3}, 3), b = randn({4}, 4);
    const Tensor y = ops::conv2d(x, w, &b, {2, 1});
    EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
    const auto ref = naive_conv(x, w, &b, 2, 1);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(Conv2d, ChannelMismatchThrows) {
    EXPECT_THROW(ops::conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), nullptr), DimensionError);
    EXPECT_THROW(ops::conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), nullptr), DimensionError);
}

TEST(Conv2d, BackwardMatchesAdjoint) {
    const Tensor x = randn({2, 3, 6, 6}, 5), w = randn({4, 3, 3, 3}, 6);
    const ops::Conv2dOptions opt{1, 1, 0.5f};
    const Tensor y = ops::conv2d(x, w, nullptr, opt);
    const Tensor g = randn(y.shape(), 7);
    // <g, conv(x)> = <conv_backward_input(g), x> = <conv_backward_weight(g), w>
    const double lhs = dot64(g, y);
    EXPECT_NEAR(dot64(ops::conv2d_backward_input(g, w, x.shape(), opt), x), lhs, 1e-3);
    const Tensor cols = ops::im2col(x, 3, 3, 1, 1);
    EXPECT_NEAR(dot64(ops::conv2d_backward_weight(g, cols, w.shape(), 0.5f), w), lhs, 1e-3);
}

TEST(Dense, IdentityAndBias) {
    const Tensor x = randn({3, 4}, 8);
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0f;
    const Tensor zb({4});
    EXPECT_EQ(ops::dense(x, eye, &zb), x);
    const Tensor beta({2}, {3.0f, -1.0f});
    const Tensor y = ops::dense(x, Tensor({4, 2}), &beta);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(y[r * 2], 3.0f);
        EXPECT_EQ(y[r * 2 + 1], -1.0f);
    }
}

TEST(Dense, MatchesLoops) {
    const Tensor x = randn({3, 5}, 9), w = randn({5, 2}, 10);
    const Tensor y = ops::dense(x, w, nullptr);
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 5; ++i) acc += double(x[n * 5 + i]) * w[i * 2 + c];
            EXPECT_NEAR(y[n * 2 + c], acc, 1e-6);
        }
    EXPECT_THROW(ops::dense(x, Tensor({4, 2}), nullptr), DimensionError);
}

TEST(Relu, SignCasesAndMask) {
    const auto r = ops::relu(Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    EXPECT_EQ(r.output, Tensor({3}, {0.0f, 0.0f, 2.0f}));
    EXPECT_EQ(r.mask, (std::vector<std::uint8_t>{0, 1, 1}));
    EXPECT_EQ(ops::relu(Tensor({4}, -2.0f)).output, Tensor({4}));
}

TEST(Relu, AbsoluteValueIdentity) {
    const Tensor x = randn({50}, 11);
    const Tensor pos = ops::relu(x).output, neg = ops::relu(scaled(x, -1.0f)).output;
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(pos[i] + neg[i], std::abs(x[i]));
}

TEST(Pool, ConstantAvgAndMax) {
    EXPECT_EQ(ops::pool(Tensor({1, 2, 4, 4}, 3.5f), {ops::PoolKind::avg, 2, 2}).output, Tensor({1, 2, 2, 2}, 3.5f));
    const auto r = ops::pool(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), {ops::PoolKind::max, 2, 2});
    EXPECT_EQ(r.output, Tensor({1, 1, 1, 1}, {4.0f}));
    EXPECT_EQ(r.argmax, (std::vector<std::size_t>{3}));
}

TEST(Pool, MaxTiesGoToFirstIndex) {
    const auto r = ops::pool(Tensor({1, 1, 2, 2}, {5, 5, 5, 5}), {ops::PoolKind::max, 2, 2});
    EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0}));
}

TEST(Pool, AvgMatchesLoops) {
    const Tensor x = randn({2, 3, 6, 6}, 12);
    const Tensor y = ops::pool(x, {ops::PoolKind::avg, 3, 2}).output;
    ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
    for (std::size_t p = 0; p < 6; ++p)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (std::size_t u = 0; u < 3; ++u)
                    for (std::size_t v = 0; v < 3; ++v) acc += x[p * 36 + (i * 2 + u) * 6 + j * 2 + v];
                EXPECT_NEAR(y[(p * 2 + i) * 2 + j], acc / 9.0, 1e-6);
            }
}

TEST(Pool, WindowLargerThanPlaneThrows) {
    EXPECT_THROW(ops::pool(Tensor({1, 1, 2, 2}), {ops::PoolKind::avg, 3, 1}), DimensionError);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
    const std::vector<int> labels{0, 3};
    const auto r = ops::softmax_cross_entropy(Tensor({2, 5}, 0.7f), labels);
    EXPECT_NEAR(r.loss, std::log(5.0), 1e-6);
}

TEST(SoftmaxCrossEntropy, DominantTrueLogit) {
    const std::vector<int> labels{1};
    const auto r = ops::softmax_cross_entropy(Tensor({1, 3}, {0.0f, 1000.0f, 0.0f}), labels);
    EXPECT_LT(r.loss, 1e-12);
    EXPECT_TRUE(r.dlogits.all_finite());
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
    const Tensor logits = randn({4, 6}, 13);
    const std::vector<int> labels{0, 5, 2, 2};
    const auto r = ops::softmax_cross_entropy(logits, labels);
    auto loss64 = [&](const std::vector<double>& z) {
        double total = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            double m = -1e300, s = 0.0;
            for (std::size_t c = 0; c < 6; ++c) m = std::max(m, z[n * 6 + c]);
            for (std::size_t c = 0; c < 6; ++c) s += std::exp(z[n * 6 + c] - m);
            total += m + std::log(s) - z[n * 6 + std::size_t(labels[n])];
        }
        return total / 4.0;
    };
    std::vector<double> z(logits.values().begin(), logits.values().end());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double h = 1e-5, saved = z[i];
        z[i] = saved + h;
        const double fp = loss64(z);
        z[i] = saved - h;
        const double fm = loss64(z);
        z[i] = saved;
        EXPECT_NEAR(r.dlogits[i], (fp - fm) / (2 * h), 1e-4);
    }
}

TEST(SoftmaxCrossEntropy, BadLabelThrows) {
    const std::vector<int> labels{3};
    EXPECT_THROW(ops::softmax_cross_entropy(Tensor({1, 3}), labels), InputError);
}

TEST(Linearity, ConvDenseAvgPool) {
    const Tensor x = randn({2, 3, 6, 6}, 14), y = randn({2, 3, 6, 6}, 15), w = randn({2, 3, 3, 3}, 16);
    const float a = 0.7f, b = -1.3f;
    const Tensor mix = add(scaled(x, a), scaled(y, b));
    auto check = [&](auto op) {
        const Tensor lhs = op(mix), rhs = add(scaled(op(x), a), scaled(op(y), b));
        EXPECT_LT(max_abs_diff(lhs, rhs), 1e-5);
    };
    check([&](const Tensor& t) { return ops::conv2d(t, w, nullptr, {1, 1}); });
    check([&](const Tensor& t) { return ops::pool(t, {ops::PoolKind::avg, 2, 2}).output; });
    const Tensor wd = randn({108, 4}, 17);
    check([&](const Tensor& t) { return ops::dense(t.reshaped({2, 108}), wd, nullptr); });
}

TEST(Finiteness, OpsOnFiniteInputsStayFinite) {
    const Tensor x = randn({2, 3, 8, 8}, 18, 50.0f), w = randn({4, 3, 3, 3}, 19, 50.0f);
    EXPECT_TRUE(ops::conv2d(x, w, nullptr, {1, 1}).all_finite());
    EXPECT_TRUE(ops::relu(x).output.all_finite());
    EXPECT_TRUE(ops::pool(x, {ops::PoolKind::max, 2, 2}).output.all_finite());
    const std::vector<int> labels{0, 1};
    EXPECT_TRUE(ops::softmax_cross_entropy(x.reshaped({2, 192}), labels).dlogits.all_finite());
}
