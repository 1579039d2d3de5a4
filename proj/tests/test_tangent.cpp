#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradfeat/error.hpp"
#include "gradfeat/oracle.hpp"
#include "gradfeat/tangent.hpp"

using namespace gradfeat;

namespace {

Tensor uniform(Shape s, std::uint64_t seed) {
    Tensor t(std::move(s));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

Tensor randn(Shape s, std::uint64_t seed) {
    Tensor t(std::move(s));
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

struct Net {
    NetworkDef def;
    ParamSet params;
};

Net default_ntk(std::uint64_t seed, std::vector<std::string> theta2 = {"conv3"}) {
    const NetworkDef def = with_theta2(default_network(), theta2);
    auto [nd, np] = adopt_ntk(def, build_network(def, seed));
    return {nd, np};
}

Net single_dense() {
    NetworkDef def;
    def.input = {1, 2, 2};
    def.layers = {LayerSpec::flatten(), LayerSpec::dense("fc", 3)};
    def.layers[1].ntk_scaled = true;
    def.split_index = 0;
    ParamSet p = build_network(def, 1);
    p.at("fc").bias = randn({3}, 2);
    return {def, p};
}

} // namespace

TEST(Jvp, ZeroTangentGivesZero) {
    const Net n = default_ntk(1);
    const Tensor x = uniform({4, 1, 16, 16}, 2);
    const auto fr = forward_features(n.def, n.params, x);
    const auto r = jvp_forward(n.def, n.params, TangentParams::zeros(n.def, n.params), fr.z0);
    EXPECT_EQ(r.tangent, Tensor({4, 64}));
}

TEST(Jvp, PrimalIsBitIdenticalToForward) {
    const Net n = default_ntk(3, {"conv2", "conv3"});
    const Tensor x = uniform({5, 1, 16, 16}, 4);
    const auto fr = forward_features(n.def, n.params, x);
    const auto r = jvp_forward(n.def, n.params, TangentParams::random(n.def, n.params, 5), fr.z0);
    EXPECT_EQ(r.features, fr.features);
}

TEST(Jvp, DenseClosedForm) {
    const Net n = single_dense();
    const Tensor x = uniform({2, 1, 2, 2}, 6);
    const TangentParams w2 = TangentParams::random(n.def, n.params, 7);
    const auto fr = forward_features(n.def, n.params, x);
    const Tensor t = jvp_forward(n.def, n.params, w2, fr.z0).tangent;
    const Tensor& wt = w2.layers.at("fc").weight;
    const Tensor& bt = *w2.layers.at("fc").bias;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 4; ++i) acc += double(x[s * 4 + i]) * wt[i * 3 + c];
            EXPECT_NEAR(t[s * 3 + c], acc / 2.0 + bt[c], 1e-6);
        }
}

TEST(Jvp, MatchesFiniteDifferences) {
    const Net n = default_ntk(8, {"conv2", "conv3"});
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const Tensor x = uniform({1, 1, 16, 16}, 100 + trial);
        TangentParams w2 = TangentParams::random(n.def, n.params, 200 + trial);
        w2.scale(static_cast<float>(1.0 / w2.norm()));
        oracle::KinkCheck kink;
        const auto fd = oracle::finite_diff_jvp(n.def, n.params, w2, x, 1e-4, &kink);
        if (kink.kink) continue;
        const Tensor t = jvp_forward(n.def, n.params, w2, forward_features(n.def, n.params, x).z0).tangent;
        const std::vector<double> jv(t.values().begin(), t.values().end());
        EXPECT_LT(oracle::relative_error(jv, fd.data, 1e-8), 1e-3);
    }
}

TEST(Jvp, LinearInTangent) {
    const Net n = default_ntk(9);
    const Tensor x = uniform({3, 1, 16, 16}, 10);
    const Tensor z0 = forward_features(n.def, n.params, x).z0;
    const TangentParams a = TangentParams::random(n.def, n.params, 11), b = TangentParams::random(n.def, n.params, 12);
    TangentParams mix = a;
    mix.scale(2.0f);
    mix.axpy(-0.5f, b);
    const Tensor lhs = jvp_forward(n.def, n.params, mix, z0).tangent;
    const Tensor rhs = add(scaled(jvp_forward(n.def, n.params, a, z0).tangent, 2.0f),
                           scaled(jvp_forward(n.def, n.params, b, z0).tangent, -0.5f));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-4 * (1.0 + norm64(rhs)));
}

TEST(Jvp, MirrorMismatchThrows) {
    const Net n = default_ntk(13);
    const Tensor z0 = forward_features(n.def, n.params, uniform({1, 1, 16, 16}, 14)).z0;
    TangentParams w2 = TangentParams::zeros(n.def, n.params);
    w2.layers.at("conv3").weight = Tensor({64, 32, 1, 1});
    EXPECT_THROW(jvp_forward(n.def, n.params, w2, z0), DimensionError);
    w2 = TangentParams::zeros(n.def, n.params);
    w2.layers.at("conv3").bias.reset();
    EXPECT_THROW(jvp_forward(n.def, n.params, w2, z0), DimensionError);
    EXPECT_THROW(jvp_forward(n.def, n.params, TangentParams{}, z0), DimensionError);
    EXPECT_THROW(jvp_forward(n.def, n.params, TangentParams::zeros(n.def, n.params), Tensor({1, 16, 8, 8})),
                 DimensionError);
}

TEST(HeadJvp, OneHotColumnSelectsFeature) {
    const Tensor jf = randn({3, 5}, 15);
    Tensor omega({5, 2});
    omega[2 * 2 + 1] = 1.0f;
    const Tensor g = head_jvp(omega, jf);
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_EQ(g[s * 2], 0.0f);
        EXPECT_EQ(g[s * 2 + 1], jf[s * 5 + 2]);
    }
    EXPECT_THROW(head_jvp(Tensor({4, 2}), jf), DimensionError);
}

TEST(Vjp, DualToJvp) {
    const Net n = default_ntk(16, {"conv2", "conv3"});
    const Tensor x = uniform({4, 1, 16, 16}, 17);
    const Tensor z0 = forward_features(n.def, n.params, x).z0;
    const TangentParams w2 = TangentParams::random(n.def, n.params, 18);
    const Tensor u = randn({4, 64}, 19);
    const double lhs = dot64(u, jvp_forward(n.def, n.params, w2, z0).tangent);
    const double rhs = vjp_theta2(n.def, n.params, z0, u).dot(w2);
    EXPECT_LT(std::abs(lhs - rhs), 1e-4 * std::max(std::abs(lhs), 1.0));
}

TEST(Vjp, CotangentShapeMismatchThrows) {
    const Net n = default_ntk(20);
    const Tensor z0 = forward_features(n.def, n.params, uniform({2, 1, 16, 16}, 21)).z0;
    EXPECT_THROW(vjp_theta2(n.def, n.params, z0, Tensor({2, 63})), DimensionError);
}

TEST(ExplicitJacobian, MatchesJvpAndVjp) {
    const NetworkDef def = oracle::tiny_network();
    const ParamSet p = oracle::tiny_params(def, 22);
    const Tensor x = uniform({2, 1, 6, 6}, 23);
    const auto J = oracle::explicit_jacobian(def, p, x);
    const TangentParams w2 = TangentParams::random(def, p, 24);
    const Tensor z0 = forward_features(def, p, x).z0;
    const Tensor jf = jvp_forward(def, p, w2, z0).tangent;
    const auto ref = oracle::jacobian_times(J, w2.flatten(def));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(jf[i], ref[i], 1e-4);

    const Tensor u = randn({2, 4}, 25);
    const auto back = vjp_theta2(def, p, z0, u).flatten(def);
    const auto ref_t = oracle::jacobian_transpose_times(J, std::vector<double>(u.values().begin(), u.values().end()));
    for (std::size_t i = 0; i < ref_t.size(); ++i) EXPECT_NEAR(back[i], ref_t[i], 1e-4);
}

TEST(TangentParams, FlattenRoundTrip) {
    const Net n = default_ntk(26, {"conv2", "conv3"});
    const TangentParams w2 = TangentParams::random(n.def, n.params, 27);
    const auto flat = w2.flatten(n.def);
    EXPECT_EQ(flat.size(), w2.numel());
    EXPECT_EQ(TangentParams::unflatten(n.def, n.params, flat).flatten(n.def), flat);
    EXPECT_THROW(TangentParams::unflatten(n.def, n.params, std::vector<double>(3)), DimensionError);
}

TEST(TangentParams, PerturbTheta2OnlyTouchesTheta2) {
    const Net n = default_ntk(28);
    const ParamSet q = perturb_theta2(n.def, n.params, TangentParams::random(n.def, n.params, 29), 0.5f);
    EXPECT_EQ(q.at("conv1").weight, n.params.at("conv1").weight);
    EXPECT_NE(q.at("conv3").weight, n.params.at("conv3").weight);
    EXPECT_EQ(theta2_of(n.def, n.params).numel(), n.params.at("conv3").weight.numel() + 64);
}
