#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "rmsd/train.hpp"

using namespace rmsd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("rmsd_train_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

ModelParams<double> scalar_model(double value) {
    ModelParams<double> p;
    p.add("w", ParamKind::Weight, Tensord(Shape{1, 1, 1, 1}, value));
    p.add("rm", ParamKind::RunningMean, Tensord(Shape{1, 1, 1, 1}, 0.5));
    return p;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 3;
    c.input_size = 32;
    c.seed = 5;
    c.network.base_ch = 4;
    return c;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersAndAdvancesStep) {
    auto p = scalar_model(0.7);
    AdamState s;
    adam_step(p, s, 1e-3);
    EXPECT_EQ(p.at("w").value[0], 0.7);
    EXPECT_EQ(s.t, 1u);
    adam_step(p, s, 1e-3);
    EXPECT_EQ(s.t, 2u);
    EXPECT_EQ(p.at("w").value[0], 0.7);
}

TEST(Adam, FirstStepsMatchHandEvaluation) {
    auto p = scalar_model(1.0);
    AdamState s;
    p.at("w").grad[0] = 1.0;
    adam_step(p, s, 0.01);
    // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps).
    EXPECT_NEAR(p.at("w").value[0], 1.0 - 0.01 / (1.0 + 1e-8), 1e-15);
    EXPECT_DOUBLE_EQ(p.at("w").m[0], 0.1);
    EXPECT_DOUBLE_EQ(p.at("w").v[0], 0.001);
    // Second step with g = 3: m = 0.39, v = 0.009999.
    p.at("w").grad[0] = 3.0;
    const double before = p.at("w").value[0];
    adam_step(p, s, 0.01);
    const double mhat = 0.39 / (1 - 0.81), vhat = 0.009999 / (1 - 0.998001);
    EXPECT_NEAR(p.at("w").value[0], before - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
    EXPECT_EQ(p.at("rm").value[0], 0.5);
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
    auto p = scalar_model(1.0);
    p.add("b", ParamKind::Bias, Tensord(Shape{1, 2, 1, 1}, 0.0));
    AdamState s;
    p.at("w").grad[0] = 1.0;
    p.at("b").grad[1] = std::numeric_limits<double>::quiet_NaN();
    try {
        adam_step(p, s, 0.1);
        FAIL();
    } catch (const NonFiniteGradient& e) {
        EXPECT_EQ(e.param(), "b");
        EXPECT_NE(std::string(e.what()).find("element 1"), std::string::npos);
    }
    EXPECT_EQ(s.t, 0u);
    EXPECT_EQ(p.at("w").value[0], 1.0);
    EXPECT_EQ(p.at("w").m[0], 0.0);
}

TEST(Adam, ClippingAndWeightDecay) {
    // Clipping rescales the gradient before the moments see it.
    auto p = scalar_model(0.0);
    AdamState s;
    p.at("w").grad[0] = 10.0;
    adam_step(p, s, 0.1, 0.0, 2.0);
    EXPECT_DOUBLE_EQ(p.at("w").m[0], 0.2);

    // With zero gradient, decay alone pulls a positive weight down by about lr.
    auto q = scalar_model(5.0);
    AdamState t;
    adam_step(q, t, 0.01, 0.1);
    EXPECT_NEAR(q.at("w").value[0], 5.0 - 0.01, 1e-9);
}

TEST(Adam, IdenticalRunsAreBitwiseIdentical) {
    const Network net(tiny_config().network);
    auto run = [&] {
        auto p = net.init<float>(3);
        AdamState s;
        Rng rng(4);
        for (int step = 0; step < 5; ++step) {
            for (auto& e : p.entries())
                if (e.trainable())
                    for (auto& g : e.grad.data()) g = static_cast<float>(rng.uniform(-1, 1));
            adam_step(p, s, 1e-3);
        }
        return encode_checkpoint(p, net.config());
    };
    EXPECT_EQ(run(), run());
}

TEST(Schedule, StepDecay) {
    const TrainConfig c;
    EXPECT_DOUBLE_EQ(lr_at(0, c), 3e-4);
    EXPECT_DOUBLE_EQ(lr_at(19, c), 3e-4);
    EXPECT_NEAR(lr_at(20, c), 3e-5, 1e-18);
    EXPECT_NEAR(lr_at(45, c), 3e-6, 1e-19);
    for (int e = 0; e <= 250; ++e) EXPECT_DOUBLE_EQ(lr_at(e, c), 3e-4 * std::pow(0.1, e / 20));
    EXPECT_THROW(lr_at(-1, c), ContractError);
}

TEST(TrainConfig, DefaultsFollowTheRecipe) {
    const TrainConfig c;
    EXPECT_EQ(c.epochs, 250);
    EXPECT_EQ(c.batch_size, 16);
    EXPECT_EQ(c.input_size, 224);
    EXPECT_TRUE(c.augment);
    EXPECT_EQ(c.grad_clip, 0.0);
    EXPECT_EQ(c.weight_decay, 0.0);
    EXPECT_EQ(c.adam, (AdamConfig{0.9, 0.999, 1e-8}));
    EXPECT_EQ(c.network.reduce_ratio, 16);
}

TEST(TrainConfig, FlatJsonRoundTripAndErrors) {
    TrainConfig c = tiny_config();
    c.network.efram_after_rmsm = true;
    c.adam.beta2 = 0.99;
    const nlohmann::json j = c;
    EXPECT_EQ(j.at("base_ch"), 4);  // network keys sit at the top level
    EXPECT_EQ(j.get<TrainConfig>(), c);

    EXPECT_THROW(nlohmann::json({{"epoch", 3}}).get<TrainConfig>(), ContractError);
    EXPECT_THROW(nlohmann::json({{"epochs", "three"}}).get<TrainConfig>(), ContractError);
    TrainConfig bad;
    bad.input_size = 100;
    EXPECT_THROW(bad.validate(), ContractError);
    bad = TrainConfig{};
    bad.decay_factor = 0;
    EXPECT_THROW(bad.validate(), ContractError);

    TempDir d("cfg");
    std::ofstream(d.path / "c.json") << R"({"epochs": 7, "base_ch": 8, "lr0": 0.001})";
    const TrainConfig f = load_train_config(d.path / "c.json");
    EXPECT_EQ(f.epochs, 7);
    EXPECT_EQ(f.network.base_ch, 8);
    EXPECT_EQ(f.batch_size, 16);
    std::ofstream(d.path / "bad.json") << "{";
    EXPECT_THROW(load_train_config(d.path / "bad.json"), ContractError);
}

TEST(Train, LogsCheckpointsAndIsReproducible) {
    TempDir d("loop");
    const fs::path manifest = write_synth(d.path / "data", synth_dataset(4, 32, 2));
    const Manifest m = read_manifest(manifest);
    const TrainConfig cfg = tiny_config();

    const TrainResult a = train(cfg, m, &m, d.path / "a");
    const TrainResult b = train(cfg, m, nullptr, d.path / "b");
    ASSERT_FALSE(a.halted);
    ASSERT_EQ(a.log.size(), 2u);
    for (const auto& r : a.log) {
        EXPECT_EQ(r.samples, 16u);  // 4 images x 4 variants
        EXPECT_EQ(r.steps, 6u);     // last batch of one is kept
        ASSERT_TRUE(r.val_dc.has_value());
        EXPECT_TRUE(std::isfinite(r.loss));
    }
    EXPECT_EQ(a.log[1].lr, lr_at(1, cfg));

    std::ifstream log(d.path / "a" / "train_log.jsonl");
    int lines = 0;
    for (std::string line; std::getline(log, line); ++lines)
        EXPECT_EQ(nlohmann::json::parse(line).at("epoch"), lines);
    EXPECT_EQ(lines, 2);

    // Validation does not touch the training trajectory.
    EXPECT_EQ(slurp(a.latest), slurp(b.latest));
    EXPECT_EQ(a.log[0].loss, b.log[0].loss);
    ASSERT_TRUE(a.best.has_value());
    EXPECT_TRUE(fs::exists(*a.best));
    EXPECT_FALSE(b.best.has_value());

    TrainConfig other = cfg;
    other.seed = 6;
    const TrainResult c = train(other, m, nullptr, d.path / "c");
    EXPECT_NE(slurp(c.latest), slurp(b.latest));

    const Checkpoint ck = load_checkpoint(a.latest, cfg.network);
    EXPECT_EQ(ck.meta.at("epoch"), 1);
    EXPECT_EQ(ck.meta.at("adam").at("t"), 12);
    EXPECT_EQ(ck.meta.at("adam").at("beta2"), 0.999);
    EXPECT_EQ(checkpoint_input_size(ck), 32);
}

TEST(Train, RejectsEmptyAndMixedSizes) {
    TempDir d("mixed");
    EXPECT_THROW(train(tiny_config(), Manifest{}, nullptr, d.path / "o"), ContractError);
    Manifest m = read_manifest(write_synth(d.path / "s32", synth_dataset(1, 32, 1)));
    const Manifest n = read_manifest(write_synth(d.path / "s16", synth_dataset(1, 16, 1)));
    m.entries.push_back(n.entries[0]);
    m.entries.back().id = "other";
    TrainConfig cfg = tiny_config();
    cfg.input_size = 0;
    cfg.augment = false;
    EXPECT_THROW(train(cfg, m, nullptr, d.path / "o"), ShapeError);
}

TEST(Train, DivergenceHaltsAndKeepsLastGoodCheckpoint) {
    TempDir d("nan");
    const Manifest m = read_manifest(write_synth(d.path / "data", synth_dataset(2, 32, 3)));
    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.lr0 = 1e30;
    const TrainResult r = train(cfg, m, nullptr, d.path / "o");
    ASSERT_TRUE(r.halted);
    EXPECT_FALSE(r.halt_reason.empty());
    EXPECT_LT(r.log.size(), 4u);
    if (!r.log.empty()) {
        const Checkpoint ck = load_checkpoint(r.latest);
        EXPECT_EQ(ck.meta.at("epoch"), r.log.back().epoch);
    }
}

TEST(Evaluate, EmptyPredictionOnEmptyMaskIsDegenerateOne) {
    TempDir d("eval");
    Image8 img{16, 16, 3, std::vector<std::uint8_t>(16 * 16 * 3, 90)};
    Image8 mask{16, 16, 1, std::vector<std::uint8_t>(16 * 16, 0)};
    write_png(d.path / "i.png", img);
    write_png(d.path / "m.png", mask);
    std::ofstream(d.path / "m.csv") << "a,i.png,m.png\n";
    const Manifest m = read_manifest(d.path / "m.csv");
    const Network net(tiny_config().network);
    auto p = net.init<float>(0);
    // Probabilities are strictly below 1, so threshold 1 predicts nothing.
    const EvalReport r = evaluate(net, p, m, 0, 1.0);
    EXPECT_EQ(r.micro.dc, 1.0);
    EXPECT_EQ(r.micro.jsi, 1.0);
    EXPECT_EQ(r.micro.rec, 1.0);
    EXPECT_TRUE(r.micro.degenerate.dc);
    EXPECT_TRUE(r.micro.degenerate.rec);
    EXPECT_EQ(r.macro.images, 1u);
}

TEST(Evaluate, ReportStructureAndPerImageIdentity) {
    TempDir d("report");
    const Manifest m = read_manifest(write_synth(d.path / "data", synth_dataset(3, 32, 4)));
    const Network net(tiny_config().network);
    auto p = net.init<float>(1);
    const EvalReport r = evaluate(net, p, m, 32, 0.5);
    ASSERT_EQ(r.images.size(), 3u);
    for (const auto& im : r.images) {
        const auto& c = im.metrics.counts;
        EXPECT_EQ(c.total(), 32u * 32u);
        const double j = im.metrics.jsi;
        EXPECT_NEAR(im.metrics.dc, 2 * j / (1 + j), 1e-12) << im.id;
    }
    const nlohmann::json js = r;
    EXPECT_EQ(js.at("images").size(), 3u);
    EXPECT_EQ(js.at("images")[0].at("id"), m.entries[0].id);
    EXPECT_TRUE(js.at("micro").contains("dc"));
    EXPECT_TRUE(js.at("macro").contains("jsi"));
}

TEST(Predict, WritesBinaryMaskAtNativeSizeDeterministically) {
    TempDir d("predict");
    const TrainConfig cfg = tiny_config();
    const Network net(cfg.network);
    save_checkpoint(d.path / "m.ckpt", net.init<float>(2), cfg.network, {{"input_size", 32}});
    Image8 img{40, 24, 3, {}};
    Rng rng(1);
    for (int i = 0; i < 40 * 24 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    write_png(d.path / "in.png", img);

    predict_file(d.path / "m.ckpt", d.path / "in.png", d.path / "a.png", 0.5);
    predict_file(d.path / "m.ckpt", d.path / "in.png", d.path / "b.png", 0.5);
    EXPECT_EQ(slurp(d.path / "a.png"), slurp(d.path / "b.png"));
    const Image8 out = read_image(d.path / "a.png");
    EXPECT_EQ(out.width, 40);
    EXPECT_EQ(out.height, 24);
    EXPECT_EQ(out.channels, 1);
    for (auto v : out.pixels) EXPECT_TRUE(v == 0 || v == 255);

    EXPECT_THROW(predict_file(d.path / "m.ckpt", d.path / "missing.png", d.path / "c.png", 0.5), ImageError);
}
