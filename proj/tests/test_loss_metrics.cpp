#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmsd/autodiff.hpp"
#include "rmsd/loss.hpp"
#include "rmsd/metrics.hpp"

using namespace rmsd;

namespace {

Tensord binary(Shape s, Rng& rng, double p = 0.4) {
    Tensord t(s);
    for (auto& v : t.data()) v = rng.uniform() < p ? 1.0 : 0.0;
    return t;
}

Tensord taped_grad(const Tensord& p, const std::function<Var(Tape<double>&, Var)>& f) {
    Tape<double> t;
    Var v = t.leaf(p);
    t.backward(f(t, v));
    return t.grad(v);
}

}  // namespace

TEST(DiceLoss, Examples) {
    const auto ones = Tensord::ones(Shape{1, 1, 10, 10});
    const auto zeros = Tensord::zeros(Shape{1, 1, 10, 10});
    EXPECT_NEAR(dice_loss(ones, ones), 0.0, 1e-15);
    EXPECT_NEAR(dice_loss(zeros, ones), 1.0 - 1.0 / 101.0, 1e-12);
    EXPECT_THROW(dice_loss(ones, Tensord(Shape{1, 1, 10, 9})), ShapeError);
}

TEST(DiceLoss, MatchesDirectSummationAndComplementsSoftDice) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = oracle::random_tensor<double>(Shape{2, 1, 5, 7}, rng, 0, 1);
        const auto y = binary(p.shape(), rng);
        double i = 0, sp = 0, sy = 0;
        for (std::size_t k = 0; k < p.size(); ++k) i += p[k] * y[k], sp += p[k], sy += y[k];
        EXPECT_NEAR(dice_loss(p, y), 1 - (2 * i + 1) / (sp + sy + 1), 1e-12);
        EXPECT_NEAR(dice_loss(p, y) + soft_dice(p, y), 1.0, 1e-9);
        EXPECT_GE(dice_loss(p, y), 0.0);
        EXPECT_LT(dice_loss(p, y), 1.0);
    }
}

TEST(FocalLoss, HandValueAndPerfectPrediction) {
    const auto half = Tensord::full(Shape{1, 1, 1, 1}, 0.5);
    const auto one = Tensord::ones(Shape{1, 1, 1, 1});
    EXPECT_NEAR(focal_loss(half, one), 0.173287, 1e-5);
    EXPECT_NEAR(focal_loss(half, one), -0.25 * std::log(0.5), 1e-15);
    Rng rng(2);
    const auto y = binary(Shape{1, 1, 8, 8}, rng);
    EXPECT_LE(focal_loss(y, y), 1e-5);
    EXPECT_LE(combined_loss(y, y), 1e-5);
    EXPECT_EQ(kFocalGamma, 2.0);
}

TEST(FocalLoss, GammaZeroIsBinaryCrossEntropy) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = oracle::random_tensor<double>(Shape{1, 1, 6, 6}, rng, 0.01, 0.99);
        const auto y = binary(p.shape(), rng);
        double bce = 0;
        for (std::size_t k = 0; k < p.size(); ++k) bce -= y[k] * std::log(p[k]) + (1 - y[k]) * std::log(1 - p[k]);
        EXPECT_NEAR(focal_loss(p, y, 0.0), bce / p.size(), 1e-6);
    }
}

TEST(FocalLoss, StrictlyDecreasingInPForPositivePixel) {
    const auto one = Tensord::ones(Shape{1, 1, 1, 1});
    double prev = INFINITY;
    for (int i = 1; i < 1000; ++i) {
        const double v = focal_loss(Tensord::full(Shape{1, 1, 1, 1}, i / 1000.0), one);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(CombinedLoss, IsSumAndGradientIsSumOfGradients) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = oracle::random_tensor<double>(Shape{2, 1, 4, 4}, rng, 0.02, 0.98);
        const auto y = binary(p.shape(), rng);
        EXPECT_EQ(combined_loss(p, y), dice_loss(p, y) + focal_loss(p, y));
        EXPECT_GE(combined_loss(p, y), 0.0);
        Tape<double> t;
        Var v = t.leaf(p);
        EXPECT_NEAR(t.value(combined_loss(t, v, y)).item(), combined_loss(p, y), 1e-15);
        const auto gc = taped_grad(p, [&](Tape<double>& tp, Var x) { return combined_loss(tp, x, y); });
        const auto gd = taped_grad(p, [&](Tape<double>& tp, Var x) { return dice_loss(tp, x, y); });
        const auto gf = taped_grad(p, [&](Tape<double>& tp, Var x) { return focal_loss(tp, x, y); });
        for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(gc[k], gd[k] + gf[k], 1e-7);
    }
}

TEST(FocalLoss, ClampedPixelsHaveZeroGradient) {
    const Tensord p(Shape{1, 1, 1, 2}, {0.0, 1.0});
    const Tensord y(Shape{1, 1, 1, 2}, {1.0, 0.0});
    const auto g = taped_grad(p, [&](Tape<double>& t, Var v) { return focal_loss(t, v, y); });
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 0.0);
    EXPECT_TRUE(std::isfinite(focal_loss(p, y)));
}

TEST(Confusion, Examples) {
    Rng rng(5);
    const auto y = binary(Shape{1, 1, 16, 16}, rng);
    const auto c = confusion(y, y);
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
    const auto all = confusion(Tensord::ones(Shape{1, 1, 1, 10}), Tensord::zeros(Shape{1, 1, 1, 10}));
    EXPECT_EQ(all, (ConfusionCounts{0, 0, 10, 0}));
}

TEST(Confusion, MatchesPixelLoop) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = oracle::random_tensor<double>(Shape{1, 1, 16, 16}, rng, 0, 1);
        const auto y = binary(p.shape(), rng);
        ConfusionCounts want;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const bool pp = p[k] >= 0.5, yy = y[k] == 1.0;
            want.tp += pp && yy;
            want.tn += !pp && !yy;
            want.fp += pp && !yy;
            want.fn += !pp && yy;
        }
        EXPECT_EQ(confusion(p, y), want);
        EXPECT_EQ(want.total(), p.size());
    }
    // threshold is inclusive
    EXPECT_EQ(confusion(Tensord::full(Shape{1, 1, 1, 1}, 0.5), Tensord::ones(Shape{1, 1, 1, 1})).tp, 1u);
}

TEST(Metrics, HandArithmetic) {
    const auto r = metrics(ConfusionCounts{50, 40, 5, 5});
    EXPECT_DOUBLE_EQ(r.ac, 0.90);
    EXPECT_DOUBLE_EQ(r.sp, 40.0 / 45.0);
    EXPECT_DOUBLE_EQ(r.rec, 50.0 / 55.0);
    EXPECT_DOUBLE_EQ(r.dc, 100.0 / 110.0);
    EXPECT_DOUBLE_EQ(r.jsi, 50.0 / 60.0);
    EXPECT_FALSE(r.degenerate.any());
}

TEST(Metrics, DegenerateConventions) {
    const auto empty = metrics(ConfusionCounts{0, 100, 0, 0});
    for (double v : {empty.ac, empty.sp, empty.rec, empty.dc, empty.jsi}) EXPECT_EQ(v, 1.0);
    EXPECT_TRUE(empty.degenerate.rec && empty.degenerate.dc && empty.degenerate.jsi);
    EXPECT_FALSE(empty.degenerate.sp);
    const auto full = metrics(ConfusionCounts{100, 0, 0, 0});
    EXPECT_EQ(full.sp, 1.0);
    EXPECT_TRUE(full.degenerate.sp);
    EXPECT_THROW(metrics(ConfusionCounts{}), ContractError);
    const nlohmann::json j = empty;
    EXPECT_EQ(j["degenerate"].size(), 3u);
}

TEST(Metrics, DiceJaccardIdentityAndBounds) {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
        if (c.total() == 0) continue;
        const auto r = metrics(c);
        // Exact on counts: 2 tp (tp+fp+fn) == (2tp+fp+fn) * 2tp/(..) reduces to this integer identity.
        const std::uint64_t a = 2 * c.tp, b = 2 * c.tp + c.fp + c.fn, u = c.tp + c.fp + c.fn;
        if (b > 0) EXPECT_EQ(a * (u + c.tp), 2 * c.tp * b);
        EXPECT_NEAR(r.dc, 2 * r.jsi / (1 + r.jsi), 1e-12);
        for (double v : {r.ac, r.sp, r.rec, r.dc, r.jsi}) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
        if (c.tp + c.fn > 0 && c.tn + c.fp > 0) EXPECT_GE(r.ac, std::min(r.sp, r.rec) - 1e-15);
    }
}

TEST(Metrics, MacroAveragesPerImage) {
    const std::vector<MetricsReport> rs{metrics(ConfusionCounts{50, 40, 5, 5}), metrics(ConfusionCounts{0, 100, 0, 0})};
    const auto m = macro_average(rs);
    EXPECT_EQ(m.images, 2u);
    EXPECT_DOUBLE_EQ(m.dc, (100.0 / 110.0 + 1.0) / 2);
}
