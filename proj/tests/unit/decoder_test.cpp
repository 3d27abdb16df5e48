#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "uavseg/decoder.hpp"
#include "uavseg/errors.hpp"

using namespace uavseg;
using namespace uavseg::testing;

namespace {

std::vector<float> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

FeatureMap constant_map(int c, int h, int w, float v) { return FeatureMap(Tensor::full({c, h, w}, v)); }

MaskLogits constant_logits(int h, int w, float v) { return MaskLogits(Tensor::full({h, w}, v)); }

// Pyramid with levels of side 4, 2, 1 and the given channel counts.
FeaturePyramid random_pyramid(Rng& rng, const std::array<int, 3>& channels, int finest = 4) {
    FeaturePyramid p;
    for (int l = 0; l < 3; ++l) {
        const int side = std::max(1, finest >> l);
        p.levels[l] = FeatureMap(random_tensor(rng, {channels[l], side, side}));
    }
    return p;
}

// Naive oracles in double.
std::vector<double> oracle_project(const Tensor& weight, const Tensor& map) {
    const int out = weight.dim(0), in = weight.dim(1), hw = map.dim(1) * map.dim(2);
    std::vector<double> y(static_cast<std::size_t>(out) * hw, 0.0);
    for (int o = 0; o < out; ++o)
        for (int i = 0; i < in; ++i)
            for (int p = 0; p < hw; ++p) y[o * hw + p] += static_cast<double>(weight.at(o * in + i)) * map.at(i * hw + p);
    return y;
}

std::vector<double> oracle_dot(const std::vector<double>& f, int c, int hw, const std::vector<float>& e) {
    std::vector<double> m(static_cast<std::size_t>(hw), 0.0);
    for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k) m[p] += e[k] * f[k * hw + p];
    return m;
}

std::vector<double> oracle_modulate(std::vector<double> f, int c, int h, int w, const std::vector<double>& above,
                                    int ah, int aw) {
    const std::vector<float> above_f(above.begin(), above.end());
    const auto up = naive_bilinear(above_f, 1, ah, aw, h, w);
    for (int k = 0; k < c; ++k)
        for (int p = 0; p < h * w; ++p) f[k * h * w + p] *= 1.0 / (1.0 + std::exp(-up[p])) + 1.0;
    return f;
}

}  // namespace

TEST(LevelMask, BasisEmbeddingExtractsAChannel) {
    Rng rng(1);
    const FeatureMap f(random_tensor(rng, {3, 5, 4}));
    for (int c = 0; c < 3; ++c) {
        std::vector<float> e(3, 0.0f);
        e[c] = 1.0f;
        MaskLogits m = compute_level_mask(f, Tensor::from({3}, e));
        ASSERT_EQ(m.values().shape(), (Shape{5, 4}));
        for (int p = 0; p < 20; ++p) EXPECT_EQ(m.values().at(p), f.values().at(c * 20 + p));
    }
}

TEST(LevelMask, ZeroEmbeddingGivesZeroLogits) {
    Rng rng(2);
    MaskLogits m = compute_level_mask(FeatureMap(random_tensor(rng, {4, 3, 3})), Tensor::zeros({4}));
    for (float v : m.values().data()) EXPECT_EQ(v, 0.0f);
}

TEST(LevelMask, MatchesNaiveDotProductLoop) {
    Rng rng(3);
    const Tensor f = random_tensor(rng, {8, 6, 6});
    const auto e = random_values(rng, 8);
    MaskLogits m = compute_level_mask(FeatureMap(f), Tensor::from({8}, e));
    std::vector<double> fd(f.data().begin(), f.data().end());
    const auto expected = oracle_dot(fd, 8, 36, e);
    for (int p = 0; p < 36; ++p) EXPECT_NEAR(m.values().at(p), expected[p], 1e-6);
}

TEST(LevelMask, DimensionMismatchIsInternalError) {
    EXPECT_THROW(compute_level_mask(constant_map(3, 2, 2, 1.0f), Tensor::zeros({4})), InternalError);
}

TEST(Modulation, ZeroLogitsScaleByOneAndAHalfExactly) {
    Rng rng(4);
    const FeatureMap f(random_tensor(rng, {3, 4, 4}));
    FeatureMap out = modulate_features(f, constant_logits(2, 2, 0.0f));
    for (std::size_t i = 0; i < f.values().numel(); ++i) EXPECT_EQ(out.values().at(i), 1.5f * f.values().at(i));
}

TEST(Modulation, SaturatedLogitsGiveOneAndTwo) {
    Rng rng(5);
    const FeatureMap f(random_tensor(rng, {3, 4, 4}));
    FeatureMap low = modulate_features(f, constant_logits(2, 2, -40.0f));
    FeatureMap high = modulate_features(f, constant_logits(2, 2, 40.0f));
    for (std::size_t i = 0; i < f.values().numel(); ++i) {
        EXPECT_NEAR(low.values().at(i), f.values().at(i), 1e-6);
        EXPECT_NEAR(high.values().at(i), 2.0f * f.values().at(i), 1e-6);
    }
}

TEST(Modulation, MultiplierStaysStrictlyBetweenOneAndTwo) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int h = uniform_int(rng, 1, 6), w = uniform_int(rng, 1, 6);
        const MaskLogits above(random_tensor(rng, {uniform_int(rng, 1, 4), uniform_int(rng, 1, 4)}, -8.0f, 8.0f));
        FeatureMap out = modulate_features(constant_map(2, h, w, 1.0f), above);
        for (float v : out.values().data()) {
            EXPECT_GT(v, 1.0f);
            EXPECT_LT(v, 2.0f);
        }
    }
}

TEST(Modulation, ResamplesTheMaskAboveBilinearly) {
    Rng rng(7);
    const Tensor above = random_tensor(rng, {2, 2}, -2.0f, 2.0f);
    const Tensor f = random_tensor(rng, {2, 4, 4});
    FeatureMap out = modulate_features(FeatureMap(f), MaskLogits(above));
    std::vector<double> fd(f.data().begin(), f.data().end());
    std::vector<double> ad(above.data().begin(), above.data().end());
    const auto expected = oracle_modulate(fd, 2, 4, 4, ad, 2, 2);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out.values().at(i), expected[i], 1e-6);
}

TEST(FuseLevels, GammaSelectsOneUpsampledMask) {
    Rng rng(8);
    std::vector<MaskLogits> masks{MaskLogits(random_tensor(rng, {4, 4})), MaskLogits(random_tensor(rng, {2, 2})),
                                  MaskLogits(random_tensor(rng, {1, 1}))};
    MaskLogits fused = fuse_level_masks(masks, Tensor::from({3}, {1, 0, 0}), 8, 8);
    const auto expected = naive_bilinear(values_of(masks[0].values()), 1, 4, 4, 8, 8);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(fused.values().at(i), expected[i], 1e-6);
}

TEST(FuseLevels, EqualWeightsAverageConstantMasks) {
    std::vector<MaskLogits> masks{constant_logits(4, 4, 0.3f), constant_logits(2, 2, 0.6f), constant_logits(1, 1, 0.9f)};
    const float third = 1.0f / 3.0f;
    MaskLogits fused = fuse_level_masks(masks, Tensor::from({3}, {third, third, third}), 5, 7);
    EXPECT_EQ(fused.values().shape(), (Shape{5, 7}));
    for (float v : fused.values().data()) EXPECT_NEAR(v, 0.6, 1e-6);
}

TEST(FuseLevels, IsLinearInTheMasks) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<MaskLogits> masks, doubled;
        const int n = uniform_int(rng, 1, 3);
        for (int l = 0; l < n; ++l) {
            Tensor t = random_tensor(rng, {uniform_int(rng, 1, 5), uniform_int(rng, 1, 5)}, -5.0f, 5.0f);
            masks.emplace_back(t);
            doubled.emplace_back(scale(t, 2.0f));
        }
        const Tensor gamma = random_tensor(rng, {n});
        MaskLogits a = fuse_level_masks(masks, gamma, 6, 6);
        MaskLogits b = fuse_level_masks(doubled, gamma, 6, 6);
        for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(b.values().at(i), 2.0f * a.values().at(i), 1e-6);
    }
}

TEST(FuseLevels, RejectsEmptyListAndGammaMismatch) {
    EXPECT_THROW(fuse_level_masks({}, Tensor::zeros({0}), 2, 2), InputError);
    EXPECT_THROW(fuse_level_masks({constant_logits(2, 2, 0.0f)}, Tensor::zeros({2}), 2, 2), InternalError);
}

TEST(Decoder, GammaStartsAtOneOverDepth) {
    for (int depth : {1, 2, 3}) {
        ParameterStore store;
        Rng rng(10);
        HierarchicalDecoder dec(DecoderConfig{depth, 4, 0, 0}, {3, 3, 3}, store, rng);
        ASSERT_EQ(dec.gamma().numel(), static_cast<std::size_t>(depth));
        for (float g : dec.gamma().data()) EXPECT_FLOAT_EQ(g, 1.0f / depth);
    }
}

TEST(Decoder, DepthOneIsTheCoarsestMaskUpsampled) {
    ParameterStore store;
    Rng rng(11);
    HierarchicalDecoder dec(DecoderConfig{1, 4, 0, 0}, {3, 5, 6}, store, rng);
    FeaturePyramid p = random_pyramid(rng, {3, 5, 6}, 8);
    const Tensor e = random_tensor(rng, {4});
    DecodeResult r = dec.decode(p, e, 16, 16);
    ASSERT_EQ(r.per_level.size(), 1u);
    MaskLogits direct = compute_level_mask(dec.project_level(p, 2), e);
    Tensor up = scale(resize_bilinear(direct.values(), 16, 16), dec.gamma().at(0));
    ASSERT_EQ(r.fused.values().shape(), up.shape());
    for (std::size_t i = 0; i < up.numel(); ++i) EXPECT_EQ(r.fused.values().at(i), up.at(i));
    for (std::size_t i = 0; i < direct.values().numel(); ++i) EXPECT_EQ(r.per_level[0].values().at(i), direct.values().at(i));
}

TEST(Decoder, DepthThreeWithFinestSelectionMatchesHandComposedPath) {
    ParameterStore store;
    Rng rng(12);
    HierarchicalDecoder dec(DecoderConfig{3, 3, 0, 0}, {2, 3, 4}, store, rng);
    auto g = dec.gamma().mutable_data();
    g[0] = 1.0f, g[1] = 0.0f, g[2] = 0.0f;
    FeaturePyramid p = random_pyramid(rng, {2, 3, 4}, 4);
    const auto e = random_values(rng, 3);
    DecodeResult r = dec.decode(p, Tensor::from({3}, e), 8, 8);

    const auto f3 = oracle_project(dec.projection(2).weight, p.levels[2].values());
    const auto m3 = oracle_dot(f3, 3, 1, e);
    const auto f2 = oracle_modulate(oracle_project(dec.projection(1).weight, p.levels[1].values()), 3, 2, 2, m3, 1, 1);
    const auto m2 = oracle_dot(f2, 3, 4, e);
    const auto f1 = oracle_modulate(oracle_project(dec.projection(0).weight, p.levels[0].values()), 3, 4, 4, m2, 2, 2);
    const auto m1 = oracle_dot(f1, 3, 16, e);
    const auto expected = naive_bilinear(std::vector<float>(m1.begin(), m1.end()), 1, 4, 4, 8, 8);

    ASSERT_EQ(r.per_level.size(), 3u);
    EXPECT_EQ(r.per_level[0].height(), 4);
    EXPECT_EQ(r.per_level[2].height(), 1);
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(r.per_level[0].values().at(i), m1[i], 1e-5);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(r.fused.values().at(i), expected[i], 1e-5);
}

TEST(Decoder, OutputTakesTheRequestedSize) {
    ParameterStore store;
    Rng rng(13);
    HierarchicalDecoder dec(DecoderConfig{3, 4, 0, 0}, {3, 3, 3}, store, rng);
    FeaturePyramid p = random_pyramid(rng, {3, 3, 3}, 8);
    const Tensor e = random_tensor(rng, {4});
    for (int side : {64, 100, 256}) {
        DecodeResult r = dec.decode(p, e, side, side);
        EXPECT_EQ(r.fused.values().shape(), (Shape{side, side}));
        EXPECT_EQ(r.fused.binarize().height, side);
    }
    EXPECT_THROW(dec.decode(p, e, 0, 4), InputError);
}

TEST(Decoder, IsDeterministic) {
    ParameterStore store;
    Rng rng(14);
    HierarchicalDecoder dec(DecoderConfig{2, 4, 0, 0}, {3, 3, 3}, store, rng);
    FeaturePyramid p = random_pyramid(rng, {3, 3, 3});
    const Tensor e = random_tensor(rng, {4});
    EXPECT_EQ(values_of(dec.decode(p, e, 9, 9).fused.values()), values_of(dec.decode(p, e, 9, 9).fused.values()));
}

TEST(Decoder, ConfigValidation) {
    EXPECT_THROW((DecoderConfig{0, 4, 0, 0}.validate()), ConfigError);
    EXPECT_THROW((DecoderConfig{4, 4, 0, 0}.validate()), ConfigError);
    EXPECT_THROW((DecoderConfig{2, 0, 0, 0}.validate()), ConfigError);
    EXPECT_THROW((DecoderConfig{2, 4, -1, 0}.validate()), ConfigError);
    EXPECT_NO_THROW((DecoderConfig{3, 4, 0, 0}.validate()));
}

TEST(DecoderGradients, SumOfFusedLogitsMatchesFiniteDifferencesInTheEmbedding) {
    ParameterStore store;
    Rng rng(15);
    HierarchicalDecoder dec(DecoderConfig{2, 3, 0, 0}, {2, 2, 2}, store, rng);
    FeaturePyramid p = random_pyramid(rng, {2, 2, 2}, 4);
    Tensor e = random_parameter(rng, {3});
    auto loss = [&] { return sum(dec.decode(p, e, 4, 4).fused.values()); };
    EXPECT_LT(check_gradient(loss, e).relative_error, 1e-3);
}

TEST(DecoderGradients, EveryParameterMatchesFiniteDifferences) {
    for (int depth : {1, 2, 3}) {
        ParameterStore store;
        Rng rng(16);
        HierarchicalDecoder dec(DecoderConfig{depth, 3, 0, 0}, {2, 3, 4}, store, rng);
        FeaturePyramid p = random_pyramid(rng, {2, 3, 4}, 4);
        const Tensor e = random_tensor(rng, {3});
        Rng probe_rng(17);
        const auto w = random_values(probe_rng, 16);
        auto loss = [&] { return weighted_sum(dec.decode(p, e, 4, 4).fused.values(), w); };
        for (const auto& [name, param] : store.entries()) {
            const auto r = check_gradient(loss, param);
            // Projections of levels the decoder does not consume get no gradient.
            if (r.analytic_norm == 0.0 && r.numeric_norm == 0.0) continue;
            EXPECT_LT(r.relative_error, 1e-3) << "depth " << depth << " " << name;
        }
    }
}
