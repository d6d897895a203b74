// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mmface/model.hpp"
#include "mmface/verify.hpp"

using namespace mmface;

namespace {

Image noisy_input(std::uint64_t seed, int side = 16) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Image x = Image::matrix(static_cast<std::size_t>(side), static_cast<std::size_t>(side));
    for (auto& v : x.values()) v = nd(rng);
    return x;
}

void randomise(ParamStore<double>& ps, const std::string& name, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sd);
    for (auto& v : ps.param(name).values()) v = nd(rng);
}

}  // namespace

TEST(Denoiser, DeskParameterCountGolden) {
    // Counted once from the layer shapes (S = 16, width 128, 4 blocks, d 64,
    // K 3, t_emb 32, EAM hidden 64) and frozen:
    //   trunk.in 32896 + temb.proj 4224 + 4 blocks x 65856 + head.base 33024
    //   + 3 aux heads x 33024 + eam.L1 12352 + eam.L2 195 + skip.gain 33 = 445220;
    //   encoders 82944 + 448 + 17408 + 2048 and 4 surrogates x 64 = 103104.
    ParamStore<double> den;
    std::mt19937_64 rng(0);
    init_denoiser(den, DenoiserConfig::desk(), rng);
    EXPECT_EQ(den.scalar_count(), 445220u);
    const auto model = Model<float>::create(DenoiserConfig::desk(), FusionConfig{}, 0);
    EXPECT_EQ(model.params.scalar_count(), 548324u);

    DenoiserConfig no_heads = DenoiserConfig::desk();
    no_heads.K = 0;
    EXPECT_EQ(Model<float>::create(no_heads, FusionConfig{}, 0).params.scalar_count(), 436705u);

    DenoiserConfig no_skip = DenoiserConfig::desk();
    no_skip.input_skip = false;
    ParamStore<double> plain;
    init_denoiser(plain, no_skip, rng);
    EXPECT_EQ(plain.scalar_count(), 445187u);
    EXPECT_FALSE(plain.contains("skip.gain"));
}

TEST(Denoiser, InputSkipIsSharedByEveryHead) {
    // With all trunk heads zeroed, every head equals gamma(t) x_t, so the
    // modulated combination returns exactly that map for any weights.
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 5);
    for (const char* h : {"head.base", "head.aux0", "head.aux1", "head.aux2"}) {
        for (auto& v : model.params.param(h).values()) v = 0.0;
        for (auto& v : model.params.param(std::string(h) + ".bias").values()) v = 0.0;
    }
    model.params.param("skip.gain.bias")[0] = 0.5;
    for (auto& v : model.params.param("eam.L2.bias").values()) v = 0.7;  // weights away from 1
    const auto x = noisy_input(2);
    const auto cs = derive_conditions(sample_params(2), 16);
    Graph<double> g(false);
    const auto out = model.forward(g, x, 60, cs);
    const auto eps = g.value(out.eps);
    for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_NEAR(eps[i], 0.5 * x[i], 1e-12);

    // Zero-initialised gain: the skip contributes nothing at initialisation.
    auto fresh = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 5);
    DenoiserConfig literal = DenoiserConfig::micro();
    literal.input_skip = false;
    auto plain = Model<double>::create(literal, FusionConfig{}, 5);
    Graph<double> g1(false), g2(false);
    EXPECT_EQ(g1.value(fresh.forward(g1, x, 60, cs).eps), g2.value(plain.forward(g2, x, 60, cs).eps));
}

TEST(Denoiser, CheckpointTensorNames) {
    const auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 0);
    for (const char* n : {"trunk.in", "temb.proj", "block0.W1", "block0.W2", "block0.q", "block0.Wk", "block0.Wv",
                          "block1.Wv", "head.base", "head.aux0", "head.aux2", "eam.L1", "eam.L2", "skip.gain", "surrogate.mask",
                          "surrogate.attr", "surrogate.sketch", "surrogate.lowres", "enc.mask", "enc.attr",
                          "enc.sketch", "enc.lowres"}) {
        EXPECT_TRUE(model.params.contains(n)) << n;
    }
    EXPECT_FALSE(model.params.contains("block2.W1"));
    EXPECT_FALSE(model.params.contains("head.aux3"));
}

TEST(Denoiser, ModulationWeightsAreOneAtInitialisation) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 3);
    const auto cs = derive_conditions(sample_params(1), 16);
    Graph<double> g(false);
    const auto out = model.forward(g, noisy_input(1), 120, cs);
    ASSERT_TRUE(out.weights.has_value());
    EXPECT_EQ(g.value(*out.weights), Tensor<double>::matrix(1, 3, 1.0));
}

TEST(Denoiser, ModulationWeightsStayInOpenInterval) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 3);
    randomise(model.params, "eam.L2", 3.0, 9);
    randomise(model.params, "eam.L2.bias", 3.0, 10);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto cs = derive_conditions(sample_params(s), 16).restricted(ModalitySet(static_cast<unsigned>(s % 16)));
        Graph<double> g(false);
        const auto out = model.forward(g, noisy_input(s), 1 + static_cast<int>(s * 9), cs);
        for (double w : g.value(*out.weights).values()) {
            EXPECT_GT(w, 0.0);
            EXPECT_LT(w, 2.0);
        }
    }
}

TEST(Denoiser, OutputSatisfiesHeadCombination) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 4);
    randomise(model.params, "eam.L2", 0.5, 1);
    const auto cs = derive_conditions(sample_params(2), 16);
    Graph<double> g(false);
    const auto out = model.forward(g, noisy_input(2), 77, cs);
    const auto& nb = g.value(out.base);
    const auto& w = g.value(*out.weights);
    ASSERT_EQ(out.aux.size(), 3u);
    for (std::size_t i = 0; i < nb.size(); ++i) {
        double expected = 0.0;
        for (std::size_t k = 0; k < 3; ++k) expected += (w[k] * (g.value(out.aux[k])[i] - nb[i]) + nb[i]) / 3.0;
        EXPECT_NEAR(g.value(out.eps)[i], expected, 1e-12);
    }
    EXPECT_EQ(g.value(out.feature).dims(), (Dims{1, 32}));
}

TEST(Denoiser, NoHeadsMeansBaseOutput) {
    DenoiserConfig dc = DenoiserConfig::micro();
    dc.K = 0;
    auto model = Model<double>::create(dc, FusionConfig{}, 5);
    EXPECT_FALSE(model.params.contains("eam.L1"));
    Graph<double> g(false);
    const auto out = model.forward(g, noisy_input(3), 10, ConditionSet(16));
    EXPECT_FALSE(out.weights.has_value());
    EXPECT_TRUE(out.aux.empty());
    EXPECT_EQ(g.value(out.eps), g.value(out.base));
}

TEST(Denoiser, ZeroOutputHeadsGiveZeroNoise) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 6);
    for (const char* n : {"head.base", "head.base.bias", "head.aux0", "head.aux0.bias", "head.aux1", "head.aux1.bias",
                          "head.aux2", "head.aux2.bias"}) {
        model.params.param(n).fill(0.0);
    }
    const auto eps = model.predict(noisy_input(4), 33, derive_conditions(sample_params(4), 16));
    for (double v : eps.values()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, AttentionIgnoresTokenOrder) {
    DenoiserConfig dc = DenoiserConfig::micro();
    auto model = Model<double>::create(dc, FusionConfig{}, 7);
    const auto cs = derive_conditions(sample_params(5), 16);
    Graph<double> g(false);
    auto seq = fuse(g, model.params, cs, model.fusion);
    const Tensor<double> tokens = g.value(*seq.tokens);
    std::vector<std::size_t> perm(tokens.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
    Tensor<double> shuffled = Tensor<double>::matrix(tokens.rows(), tokens.cols());
    for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t c = 0; c < tokens.cols(); ++c) shuffled.at(r, c) = tokens.at(perm[r], c);

    const Image x = noisy_input(5);
    auto run = [&](const Tensor<double>& toks) {
        Graph<double> h(false);
        TokenSequence<double> s;
        s.tokens = h.constant(toks);
        s.tags.resize(toks.rows(), Modality::Mask);
        const auto out = denoiser_forward(h, model.params, dc, h.constant(x.reshaped({1, 256})), 90, s);
        return Tensor<double>(h.value(out.eps));
    };
    const auto a = run(tokens), b = run(shuffled);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Denoiser, ConditionsChangeThePrediction) {
    auto model = Model<double>::create(DenoiserConfig::micro(), FusionConfig{}, 8);
    const Image x = noisy_input(6);
    const auto full = derive_conditions(sample_params(6), 16);
    const auto a = model.predict(x, 60, full);
    const auto b = model.predict(x, 60, full.restricted(ModalitySet{Modality::Attr}));
    const auto c = model.predict(x, 60, ConditionSet(16));
    EXPECT_NE(a, b);
    EXPECT_NE(b, c);
    EXPECT_NE(model.predict(x, 61, full), a);  // timestep enters through the embedding
}

TEST(Denoiser, RejectsBadInputs) {
    DenoiserConfig dc = DenoiserConfig::micro();
    auto model = Model<double>::create(dc, FusionConfig{}, 9);
    EXPECT_THROW(model.predict(noisy_input(1), 0, ConditionSet(16)), ConfigError);
    EXPECT_THROW(model.predict(noisy_input(1), 201, ConditionSet(16)), ConfigError);
    EXPECT_THROW(model.predict(noisy_input(1, 32), 5, ConditionSet(16)), DimError);
    Graph<double> g(false);
    TokenSequence<double> wrong;
    wrong.tokens = g.constant(Tensor<double>::matrix(3, dc.d + 1));
    wrong.tags.assign(3, Modality::Mask);
    EXPECT_THROW(denoiser_forward(g, model.params, dc, g.constant(Tensor<double>::matrix(1, 256)), 5, wrong), DimError);
    DenoiserConfig bad = dc;
    bad.width = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Denoiser, TimeFeaturesSpanOneToHorizon) {
    const auto f = time_features(7, 32, 200);
    EXPECT_DOUBLE_EQ(f[0], std::sin(7.0));
    EXPECT_DOUBLE_EQ(f[16], std::cos(7.0));
    EXPECT_NEAR(f[15], std::sin(7.0 / 200.0), 1e-15);
    EXPECT_NEAR(f[31], std::cos(7.0 / 200.0), 1e-15);
}

TEST(Denoiser, MicroGradientCheck) {
    const auto rep = micro_grad_check(64, 0);
    EXPECT_EQ(rep.probes.size(), 64u);
    EXPECT_LT(rep.max_rel_error, kGradCheckTolerance);
}
