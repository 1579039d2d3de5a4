#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradfeat/error.hpp"
#include "gradfeat/netdef.hpp"

using namespace gradfeat;

namespace {

Tensor uniform(Shape s, std::uint64_t seed) {
    Tensor t(std::move(s));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

NetworkDef dense_net() {
    NetworkDef def;
    def.input = {1, 2, 2};
    def.layers = {LayerSpec::flatten(), LayerSpec::dense("fc1", 3), LayerSpec::relu(), LayerSpec::dense("fc2", 2)};
    def.split_index = 1;
    return def;
}

} // namespace

TEST(NetworkDef, DefaultShapesAndSplit) {
    const NetworkDef def = default_network();
    EXPECT_EQ(def.param_names(), (std::vector<std::string>{"conv1", "conv2", "conv3"}));
    EXPECT_EQ(def.theta2_names(), (std::vector<std::string>{"conv3"}));
    EXPECT_EQ(def.feature_dim(), 64u);
    EXPECT_EQ(def.weight_shape("conv2"), (Shape{32, 16, 3, 3}));
    EXPECT_EQ(def.fan_in("conv3"), 32u * 9u);
    EXPECT_EQ(def.boundary_layer(), 6u);
}

TEST(NetworkDef, ValidationNamesTheBadPair) {
    NetworkDef def;
    def.input = {1, 4, 4};
    def.layers = {LayerSpec::conv("c", 2, 5)};
    try {
        validate(def);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("c"), std::string::npos);
    }
    def.layers = {LayerSpec::dense("fc", 2)};
    EXPECT_THROW(validate(def), ValidationError);
    def = default_network();
    def.split_index = 9;
    EXPECT_THROW(validate(def), ValidationError);
}

TEST(NetworkDef, WithTheta2RequiresTopmostLayers) {
    const NetworkDef def = default_network();
    EXPECT_EQ(with_theta2(def, {"conv2", "conv3"}).theta2_names(), (std::vector<std::string>{"conv2", "conv3"}));
    EXPECT_THROW(with_theta2(def, {"conv2"}), ConfigError);
    EXPECT_THROW(with_theta2(def, {"conv9"}), ConfigError);
}

TEST(NetworkDef, JsonRoundTrip) {
    NetworkDef def = default_network({3, 8, 8});
    def.layers[2] = LayerSpec::pool(ops::PoolKind::max, 2, 2);
    const NetworkDef back = network_from_json(to_json(def));
    EXPECT_EQ(to_json(back), to_json(def));
    EXPECT_THROW(network_from_json(nlohmann::json::parse(R"({"input":[1,4,4],"layers":[{"kind":"warp"}]})")),
                 ValidationError);
}

TEST(BuildNetwork, DeterministicPerSeed) {
    const NetworkDef def = default_network();
    EXPECT_EQ(build_network(def, 7).checksum(), build_network(def, 7).checksum());
    EXPECT_NE(build_network(def, 7).checksum(), build_network(def, 8).checksum());
    const ParamSet p = build_network(def, 7);
    for (const auto& [name, lp] : p.layers) {
        EXPECT_EQ(lp.weight.shape(), def.weight_shape(name));
        EXPECT_EQ(*lp.bias, Tensor({def.layer(name).out}));
        EXPECT_EQ(p.provenance.at(name), Provenance::random);
    }
}

TEST(BuildNetwork, HeVarianceAndNtkStandardNormal) {
    const NetworkDef def = default_network();
    auto variance = [](const Tensor& t) {
        double s = 0.0;
        for (float v : t.values()) s += double(v) * v;
        return s / double(t.numel());
    };
    const ParamSet p = build_network(def, 3);
    // conv3 has 64*32*9 = 18432 weights; relative standard error of the variance ~1%.
    EXPECT_NEAR(variance(p.at("conv3").weight) * 288.0 / 2.0, 1.0, 0.05);
    NetworkDef ntk = def;
    ntk.layers[6].ntk_scaled = true;
    EXPECT_NEAR(variance(build_network(ntk, 3).at("conv3").weight), 1.0, 0.05);
}

TEST(Ntk, ScaleIsInverseSqrtFanIn) {
    NetworkDef def = dense_net();
    def.layers[3].ntk_scaled = true;
    EXPECT_FLOAT_EQ(def.weight_scale("fc2"), 1.0f / std::sqrt(3.0f));
    EXPECT_EQ(def.weight_scale("fc1"), 1.0f);

    // Hand-computed: x = [1,2,3,4], fc1 = identity-like, fc2 weight all ones.
    ParamSet p;
    p.layers["fc1"] = {Tensor({4, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0}), Tensor({3})};
    p.layers["fc2"] = {Tensor({3, 2}, 1.0f), Tensor({2}, {0.5f, 0.0f})};
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor f = forward_features(def, p, x).features;
    EXPECT_NEAR(f[0], 6.0 / std::sqrt(3.0) + 0.5, 1e-6);
    EXPECT_NEAR(f[1], 6.0 / std::sqrt(3.0), 1e-6);
}

TEST(Ntk, AdoptPreservesFunction) {
    const NetworkDef def = with_theta2(default_network(), {"conv2", "conv3"});
    const ParamSet p = build_network(def, 11);
    const auto [nd, np] = adopt_ntk(def, p);
    EXPECT_TRUE(nd.layer("conv3").ntk_scaled);
    EXPECT_FALSE(nd.layer("conv1").ntk_scaled);
    const Tensor x = uniform({4, 1, 16, 16}, 12);
    const Tensor a = forward_features(def, p, x).features, b = forward_features(nd, np, x).features;
    EXPECT_LT(max_abs_diff(a, b), 1e-5 * (1.0 + norm64(a)));
}

TEST(Ntk, AdoptIsIdempotent) {
    const NetworkDef def = default_network();
    const auto [nd, np] = adopt_ntk(def, build_network(def, 2));
    const auto [nd2, np2] = adopt_ntk(nd, np);
    EXPECT_EQ(np.checksum(), np2.checksum());
    EXPECT_EQ(to_json(nd), to_json(nd2));
}

TEST(Ntk, WeightGradientScalesWithInverseSqrtFanIn) {
    // Under the NTK form, df/dw is the standard gradient times 1/sqrt(fan_in).
    const NetworkDef def = dense_net();
    ParamSet p = build_network(def, 4);
    const auto [nd, np] = adopt_ntk(def, p);
    const Tensor x = uniform({2, 1, 2, 2}, 5);
    auto grad = [&](const NetworkDef& d, const ParamSet& q) {
        Tape tape;
        const auto out = record_forward(tape, d, q, tape.constant(x), 0, d.layers.size(), {"fc2"});
        return tape.backward(out, Tensor({2, 2}, 1.0f)).params.at("fc2.weight");
    };
    const Tensor gs = grad(def, p), gn = grad(nd, np);
    for (std::size_t i = 0; i < gs.numel(); ++i) EXPECT_NEAR(gn[i], gs[i] / std::sqrt(3.0f), 1e-5);
}

TEST(BatchNorm, FoldingMatchesConvThenBn) {
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor w({4, 2, 3, 3}), b({4});
    for (auto& v : w.values()) v = n(rng);
    for (auto& v : b.values()) v = n(rng);
    BatchNormStats bn{Tensor({4}), Tensor({4}), Tensor({4}), Tensor({4})};
    for (std::size_t c = 0; c < 4; ++c) {
        bn.gamma[c] = 1.0f + 0.25f * float(c);
        bn.beta[c] = n(rng);
        bn.mean[c] = n(rng);
        bn.var[c] = 0.5f + float(c);
    }
    const Tensor x = uniform({2, 2, 6, 6}, 7);
    const Tensor ref = batchnorm_inference(ops::conv2d(x, w, &b, {1, 1}), bn);
    const auto [fw, fb] = fold_batchnorm(w, &b, bn);
    EXPECT_LT(max_abs_diff(ops::conv2d(x, fw, &fb, {1, 1}), ref), 1e-5);

    bn.var[0] = -1.0f;
    EXPECT_THROW(fold_batchnorm(w, &b, bn), InputError);
    EXPECT_THROW(fold_batchnorm(w, &b, BatchNormStats{Tensor({3}), Tensor({3}), Tensor({3}), Tensor({3})}),
                 DimensionError);
}

TEST(ForwardFeatures, ZeroInputGivesZeroFeaturesWithZeroBiases) {
    const NetworkDef def = default_network();
    const auto r = forward_features(def, build_network(def, 1), Tensor({3, 1, 16, 16}));
    EXPECT_EQ(r.features, Tensor({3, 64}));
    EXPECT_EQ(r.z0.shape(), (Shape{3, 32, 4, 4}));
}

TEST(ForwardFeatures, FeaturesAreNonNegativeAfterRelu) {
    const NetworkDef def = default_network();
    const Tensor f = forward_features(def, build_network(def, 1), uniform({5, 1, 16, 16}, 2)).features;
    for (float v : f.values()) EXPECT_GE(v, 0.0f);
}

TEST(ForwardFeatures, ChunkedHelpersAgree) {
    const NetworkDef def = default_network();
    const ParamSet p = build_network(def, 9);
    const Tensor x = uniform({7, 1, 16, 16}, 10);
    const auto r = forward_features(def, p, x);
    EXPECT_EQ(compute_features(def, p, x, 3), r.features);
    EXPECT_EQ(compute_z0(def, p, x, 2), r.z0);
}

TEST(ForwardFeatures, InputShapeMismatchThrows) {
    const NetworkDef def = default_network();
    EXPECT_THROW(forward_features(def, build_network(def, 1), Tensor({1, 3, 16, 16})), DimensionError);
    ParamSet p = build_network(def, 1);
    p.layers.erase("conv2");
    EXPECT_THROW(check_params(def, p), DimensionError);
}
