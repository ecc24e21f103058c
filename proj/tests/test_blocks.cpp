#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rmsd/blocks.hpp"
#include "rmsd/gradcheck_suite.hpp"

using namespace rmsd;

namespace {

template <typename Block>
ModelParams<double> params_for(const Block& b, std::uint64_t seed = 1) {
    ModelParams<double> p;
    Rng rng(seed);
    init_params(p, b, rng);
    for (auto& e : p.entries())
        if (e.kind == ParamKind::Bias)
            for (auto& v : e.value.data()) v = rng.uniform(-0.2, 0.2);
    return p;
}

void zero(ModelParams<double>& p, const std::string& prefix) {
    for (auto& e : p.entries())
        if (e.name.rfind(prefix, 0) == 0) e.value = Tensord::zeros(e.value.shape());
}

// Runs one block function in inference mode and returns its value.
template <typename F>
Tensord run(ModelParams<double>& p, F&& f, Mode mode = Mode::Infer) {
    Tape<double> t;
    Graph<double> g(t, p, mode);
    return t.value(f(g));
}

}  // namespace

TEST(Rmsm, ChannelIdentityAndShapes) {
    const RmsmBlock blk("b", 4, 12, 12, false);
    auto p = params_for(blk);
    Rng rng(2);
    const auto x = oracle::random_tensor<double>(Shape{1, 4, 16, 16}, rng);
    auto y = run(p, [&](Graph<double>& g) { return rmsm_forward(g, blk, g.tape().constant(x)); });
    EXPECT_EQ(y.shape(), (Shape{1, 16, 16, 16}));

    const RmsmBlock ds("d", 4, 4, 4, true);
    auto pd = params_for(ds);
    y = run(pd, [&](Graph<double>& g) { return rmsm_forward(g, ds, g.tape().constant(x)); });
    EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
}

TEST(Rmsm, ChannelIdentityHoldsAcrossSizes) {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int in = 1 + static_cast<int>(rng.below(5));
        const int bott = 1 + static_cast<int>(rng.below(6));
        const bool down = rng.below(2) == 1;
        const int hw = 8 + static_cast<int>(rng.below(8));
        const RmsmBlock blk("b", in, 2, bott, down);
        auto p = params_for(blk, trial);
        const auto x = oracle::random_tensor<double>(Shape{1, in, hw, hw + 1}, rng);
        const auto y = run(p, [&](Graph<double>& g) { return rmsm_forward(g, blk, g.tape().constant(x)); });
        EXPECT_EQ(y.channels(), in + bott);
        EXPECT_EQ(y.height(), down ? (hw + 1) / 2 : hw);
        EXPECT_EQ(y.width(), down ? (hw + 2) / 2 : hw + 1);
    }
}

TEST(Rmsm, ResidualComesFirst) {
    const RmsmBlock blk("b", 3, 3, 5, false);
    auto p = params_for(blk);
    zero(p, "b.bottleneck");
    Rng rng(4);
    const auto x = oracle::random_tensor<double>(Shape{2, 3, 9, 9}, rng);
    const auto y = run(p, [&](Graph<double>& g) { return rmsm_forward(g, blk, g.tape().constant(x)); });
    EXPECT_EQ(slice_channels(y, 0, 3), x);
    const Tensord tail = slice_channels(y, 3, 8);
    for (double v : tail.data()) EXPECT_EQ(v, 0.0);
}

TEST(Rmsm, RejectsChannelMismatch) {
    const RmsmBlock blk("b", 3, 3, 3, false);
    auto p = params_for(blk);
    Tape<double> t;
    Graph<double> g(t, p, Mode::Infer);
    EXPECT_THROW(rmsm_forward(g, blk, t.constant(Tensord(Shape{1, 4, 8, 8}))), ShapeError);
}

TEST(Dfram, ZeroedGatesGiveQuarter) {
    const DframBlock blk("df", 4, 8, 2);
    auto p = params_for(blk);
    zero(p, "df.");
    Rng rng(5);
    const auto s = oracle::random_tensor<double>(Shape{1, 4, 6, 6}, rng);
    const auto d = oracle::random_tensor<double>(Shape{1, 8, 3, 3}, rng);
    const auto ch = run(p, [&](Graph<double>& g) { return dfram_channel_attention(g, blk, g.tape().constant(d)); });
    for (double v : ch.data()) EXPECT_DOUBLE_EQ(v, 0.5);
    const auto y = run(p, [&](Graph<double>& g) {
        return dfram_forward(g, blk, g.tape().constant(s), g.tape().constant(d));
    });
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.25 * s[i]);
}

TEST(Dfram, ChannelGateMatchesComposedOracle) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const DframBlock blk("df", 5, 12, 4);
        auto p = params_for(blk, trial);
        const auto d = oracle::random_tensor<double>(Shape{2, 12, 5, 4}, rng);
        const auto got = run(p, [&](Graph<double>& g) { return dfram_channel_attention(g, blk, g.tape().constant(d)); });
        ASSERT_EQ(got.shape(), (Shape{2, 5, 1, 1}));
        auto h = oracle::dense(oracle::global_avg_pool(d), p.at("df.mlp1.weight").value, p.at("df.mlp1.bias").value);
        for (auto& v : h.data()) v = std::max(v, 0.0);
        auto o = oracle::dense(h, p.at("df.mlp2.weight").value, p.at("df.mlp2.bias").value);
        for (auto& v : o.data()) v = 1.0 / (1.0 + std::exp(-v));
        EXPECT_LT(max_abs_diff(got, o), 1e-6);
    }
}

TEST(Dfram, ChannelGateIgnoresSpatialSizeOfConstantInput) {
    const DframBlock blk("df", 3, 6, 2);
    auto p = params_for(blk);
    const auto a = run(p, [&](Graph<double>& g) {
        return dfram_channel_attention(g, blk, g.tape().constant(Tensord::full(Shape{1, 6, 3, 3}, 0.4)));
    });
    const auto b = run(p, [&](Graph<double>& g) {
        return dfram_channel_attention(g, blk, g.tape().constant(Tensord::full(Shape{1, 6, 11, 7}, 0.4)));
    });
    EXPECT_EQ(a, b);
}

TEST(Dfram, SpatialGateIsSumOfBranches) {
    const DframBlock blk("df", 32, 64, 16);
    auto p = params_for(blk);
    Rng rng(7);
    const auto s = oracle::random_tensor<double>(Shape{1, 32, 28, 28}, rng);
    const auto d = oracle::random_tensor<double>(Shape{1, 64, 14, 14}, rng);
    const auto got = run(p, [&](Graph<double>& g) {
        return dfram_spatial_attention(g, blk, g.tape().constant(s), g.tape().constant(d));
    });
    ASSERT_EQ(got.shape(), (Shape{1, 1, 28, 28}));

    const auto sr = oracle::conv2d(s, p.at("df.squeeze_skip.weight").value, p.at("df.squeeze_skip.bias").value, 1);
    const auto dr0 =
        oracle::conv2d(d, p.at("df.squeeze_decoder.weight").value, p.at("df.squeeze_decoder.bias").value, 1);
    const auto dr = oracle::bilinear_upsample(dr0, 28, 28);
    const Tensord* parts[] = {&sr, &dr};
    const auto cat = ops::concat_channels<double>(parts);
    Tensord acc(Shape{1, 1, 28, 28});
    for (int k : kSpatialKernels) {
        const std::string n = "df.spatial" + std::to_string(k);
        const auto branch = oracle::conv2d(cat, p.at(n + ".weight").value, p.at(n + ".bias").value, 1);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += branch[i];
    }
    for (auto& v : acc.data()) v = 1.0 / (1.0 + std::exp(-v));
    EXPECT_LT(max_abs_diff(got, acc), 1e-6);
}

TEST(Dfram, ZeroedSpatialConvsGiveHalf) {
    const DframBlock blk("df", 4, 8, 2);
    auto p = params_for(blk);
    zero(p, "df.spatial");
    Rng rng(8);
    const auto s = oracle::random_tensor<double>(Shape{1, 4, 6, 6}, rng);
    const auto d = oracle::random_tensor<double>(Shape{1, 8, 3, 3}, rng);
    const auto y = run(p, [&](Graph<double>& g) {
        return dfram_spatial_attention(g, blk, g.tape().constant(s), g.tape().constant(d));
    });
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Dfram, RejectsLargerDecoderFeature) {
    const DframBlock blk("df", 4, 8, 2);
    auto p = params_for(blk);
    Tape<double> t;
    Graph<double> g(t, p, Mode::Infer);
    EXPECT_THROW(dfram_spatial_attention(g, blk, t.constant(Tensord(Shape{1, 4, 4, 4})),
                                         t.constant(Tensord(Shape{1, 8, 8, 8}))),
                 ShapeError);
}

TEST(Attention, GatesStrictlyInsideUnitIntervalAndOutputBounded) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const DframBlock df("df", 4, 8, 2);
        const EframBlock ef("ef", 4, 2);
        auto p = params_for(df, trial);
        auto pe = params_for(ef, trial);
        const auto s = oracle::random_tensor<double>(Shape{2, 4, 8, 8}, rng, -5, 5);
        const auto d = oracle::random_tensor<double>(Shape{2, 8, 4, 4}, rng, -5, 5);
        const auto y = run(p, [&](Graph<double>& g) {
            return dfram_forward(g, df, g.tape().constant(s), g.tape().constant(d));
        });
        const auto e = run(pe, [&](Graph<double>& g) { return efram_forward(g, ef, g.tape().constant(s)); });
        const auto ch = run(pe, [&](Graph<double>& g) { return efram_channel_attention(g, ef, g.tape().constant(s)); });
        const auto sp = run(pe, [&](Graph<double>& g) { return efram_spatial_attention(g, ef, g.tape().constant(s)); });
        for (std::size_t i = 0; i < s.size(); ++i) {
            EXPECT_LE(std::abs(y[i]), std::abs(s[i]));
            EXPECT_LE(std::abs(e[i]), std::abs(s[i]));
        }
        for (double v : ch.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
        for (double v : sp.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    }
}

TEST(Efram, ZeroedGatesAndShape) {
    const EframBlock blk("ef", 16, 16);
    auto p = params_for(blk);
    Rng rng(10);
    const auto s = oracle::random_tensor<double>(Shape{2, 16, 14, 14}, rng);
    auto y = run(p, [&](Graph<double>& g) { return efram_forward(g, blk, g.tape().constant(s)); });
    EXPECT_EQ(y.shape(), s.shape());
    zero(p, "ef.");
    y = run(p, [&](Graph<double>& g) { return efram_forward(g, blk, g.tape().constant(s)); });
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.25 * s[i]);
}

TEST(Blocks, InferenceIsPure) {
    const RmsmBlock blk("b", 3, 3, 3, true);
    auto p = params_for(blk);
    Rng rng(11);
    const auto x = oracle::random_tensor<double>(Shape{2, 3, 10, 10}, rng);
    const auto a = run(p, [&](Graph<double>& g) { return rmsm_forward(g, blk, g.tape().constant(x)); });
    const auto b = run(p, [&](Graph<double>& g) { return rmsm_forward(g, blk, g.tape().constant(x)); });
    EXPECT_EQ(a, b);
}

TEST(Blocks, GradcheckSmokeSuite) {
    SuiteOptions o;
    o.scale = SuiteScale::Smoke;
    for (const auto& c : run_gradcheck_suite(o)) EXPECT_TRUE(c.report.passed) << c.name << ": " << c.report.summary();
}
