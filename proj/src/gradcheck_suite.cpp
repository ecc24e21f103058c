#include "rmsd/gradcheck_suite.hpp"

#include <algorithm>

#include "rmsd/blocks.hpp"
#include "rmsd/loss.hpp"
#include "rmsd/network.hpp"

namespace rmsd {

GradcheckReport gradcheck_model(const ModelParams<double>& params, const GraphFunction& f,
                                const std::vector<Tensord>& inputs, Mode mode, const GradcheckOptions& options) {
    std::vector<std::string> names;
    std::vector<Tensord> points = inputs;
    for (const auto& e : params.entries()) {
        if (!e.trainable()) continue;
        names.push_back(e.name);
        points.push_back(e.value);
    }
    const std::size_t n_inputs = inputs.size();
    TapedFunction<double> taped = [&](Tape<double>& t, std::span<const Var> v) {
        ModelParams<double> local = params;
        Graph<double> g(t, local, mode);
        for (std::size_t i = 0; i < names.size(); ++i) g.bind(names[i], v[n_inputs + i]);
        return f(g, v.subspan(0, n_inputs));
    };
    return gradcheck<double>(taped, points, options);
}

namespace {

Tensord random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensord t(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Fixed random projection to a scalar so every output element gets a
/// distinct upstream gradient.
Var project(Tape<double>& t, Var v, std::uint64_t seed) {
    Rng rng(seed);
    return sum(t, mul(t, v, t.constant(random_tensor(t.shape(v), rng))));
}

GradcheckReport merge(const std::vector<GradcheckReport>& parts, double min_pass) {
    GradcheckReport r;
    double total = 0.0;
    for (const auto& p : parts) {
        r.checked += p.checked;
        r.failed += p.failed;
        r.max_rel_error = std::max(r.max_rel_error, p.max_rel_error);
        total += p.mean_rel_error * static_cast<double>(p.checked);
    }
    r.mean_rel_error = r.checked ? total / static_cast<double>(r.checked) : 0.0;
    r.passed = r.pass_fraction() >= min_pass;
    return r;
}

template <typename Block>
ModelParams<double> block_params(const Block& block, std::uint64_t seed) {
    ModelParams<double> p;
    Rng rng(seed);
    init_params(p, block, rng);
    // Perturb biases and affine terms away from their zero/one initial values
    // so every parameter has a generic gradient.
    for (auto& e : p.entries())
        if (e.kind == ParamKind::Bias || e.kind == ParamKind::Beta || e.kind == ParamKind::Gamma)
            for (auto& v : e.value.data()) v += rng.uniform(-0.3, 0.3);
    return p;
}

class Runner {
public:
    Runner(const SuiteOptions& o, const std::function<void(const SuiteCase&)>& cb) : opts_(o), cb_(cb) {}

    void record(std::string name, GradcheckReport r) {
        cases_.push_back({std::move(name), r});
        if (cb_) cb_(cases_.back());
    }

    void primitives() {
        GradcheckOptions o;
        o.min_pass_fraction = 0.99;
        Rng rng = Rng::derive(opts_.seed, 1);
        for (int k : {1, 3, 5, 7, 9})
            for (int stride : {1, 2}) {
                auto x = random_tensor(Shape{2, 2, 7, 6}, rng);
                auto w = random_tensor(Shape{3, 2, k, k}, rng);
                auto b = random_tensor(Shape{1, 3, 1, 1}, rng);
                record("conv2d k" + std::to_string(k) + " s" + std::to_string(stride),
                    gradcheck<double>(
                        [stride](Tape<double>& t, std::span<const Var> v) {
                            return project(t, conv2d(t, v[0], v[1], v[2], stride), 11);
                        },
                        {x, w, b}, o));
            }
        for (Mode mode : {Mode::Train, Mode::Infer}) {
            auto x = random_tensor(Shape{3, 2, 3, 4}, rng, -2, 2);
            auto g = random_tensor(Shape{1, 2, 1, 1}, rng, 0.5, 1.5);
            auto b = random_tensor(Shape{1, 2, 1, 1}, rng);
            record(mode == Mode::Train ? "batch_norm2d train" : "batch_norm2d infer",
                gradcheck<double>(
                    [mode](Tape<double>& t, std::span<const Var> v) {
                        Tensord rm = Tensord::full(Shape{1, 2, 1, 1}, 0.2);
                        Tensord rv = Tensord::full(Shape{1, 2, 1, 1}, 1.3);
                        return project(t, batch_norm2d(t, v[0], v[1], v[2], rm, rv, 1e-5, 0.1, mode), 12);
                    },
                    {x, g, b}, o));
        }
        auto x = random_tensor(Shape{2, 3, 5, 5}, rng);
        record("global_avg_pool",
            gradcheck<double>([](Tape<double>& t, Var v) { return project(t, global_avg_pool(t, v), 13); }, x, o));
        record("avg_pool2", gradcheck<double>([](Tape<double>& t, Var v) { return project(t, avg_pool2(t, v), 14); }, x, o));
        record("bilinear_upsample",
            gradcheck<double>([](Tape<double>& t, Var v) { return project(t, bilinear_upsample(t, v, 11, 8), 15); },
                              x, o));
        record("sigmoid", gradcheck<double>([](Tape<double>& t, Var v) { return project(t, sigmoid(t, v), 16); }, x, o));
        auto shifted = x;
        for (auto& v : shifted.data()) v += v >= 0 ? 0.05 : -0.05;  // keep clear of the kink
        record("relu", gradcheck<double>([](Tape<double>& t, Var v) { return project(t, relu(t, v), 17); }, shifted, o));

        auto d = random_tensor(Shape{3, 5, 1, 1}, rng);
        auto w = random_tensor(Shape{4, 5, 1, 1}, rng);
        auto b = random_tensor(Shape{1, 4, 1, 1}, rng);
        record("dense", gradcheck<double>(
                         [](Tape<double>& t, std::span<const Var> v) { return project(t, dense(t, v[0], v[1], v[2]), 18); },
                         {d, w, b}, o));

        auto a = random_tensor(Shape{2, 3, 4, 4}, rng);
        auto s = random_tensor(Shape{2, 1, 4, 4}, rng);
        auto c = random_tensor(Shape{2, 3, 1, 1}, rng);
        record("add/mul broadcast", gradcheck<double>(
                                     [](Tape<double>& t, std::span<const Var> v) {
                                         Var m = mul(t, mul(t, v[0], v[1]), v[2]);
                                         return project(t, add(t, scale(t, m, 0.7), v[2]), 19);
                                     },
                                     {a, s, c}, o));
        record("concat/slice", gradcheck<double>(
                                [](Tape<double>& t, std::span<const Var> v) {
                                    const Var parts[] = {v[0], v[1], v[0]};
                                    return project(t, slice_channels(t, concat_channels<double>(t, parts), 1, 6), 20);
                                },
                                {a, s}, o));
    }

    void losses() {
        GradcheckOptions o;
        o.tolerance = 1e-4;
        Rng rng = Rng::derive(opts_.seed, 2);
        auto p = random_tensor(Shape{2, 1, 6, 6}, rng, 0.05, 0.95);
        Tensord y(p.shape());
        for (auto& v : y.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        record("dice_loss", gradcheck<double>([&y](Tape<double>& t, Var v) { return dice_loss(t, v, y); }, p, o));
        record("focal_loss gamma 2", gradcheck<double>([&y](Tape<double>& t, Var v) { return focal_loss(t, v, y); }, p, o));
        record("focal_loss gamma 0",
            gradcheck<double>([&y](Tape<double>& t, Var v) { return focal_loss(t, v, y, 0.0); }, p, o));
        record("combined_loss", gradcheck<double>([&y](Tape<double>& t, Var v) { return combined_loss(t, v, y); }, p, o));
    }

    void blocks() {
        const int seeds = opts_.scale == SuiteScale::Smoke ? 1 : opts_.block_seeds;
        GradcheckOptions o;
        o.max_coordinates = 80;
        std::vector<GradcheckReport> rmsm, rmsm_ds, df, ef;
        for (int k = 0; k < seeds; ++k) {
            const std::uint64_t seed = opts_.seed * 1000 + static_cast<std::uint64_t>(k);
            Rng rng = Rng::derive(seed, 3);
            o.seed = seed;
            {
                const RmsmBlock blk("rmsm", 3, 3, 3, false);
                auto p = block_params(blk, seed);
                auto x = random_tensor(Shape{2, 3, 6, 6}, rng);
                rmsm.push_back(gradcheck_model(
                    p, [&blk](Graph<double>& g, std::span<const Var> v) { return project(g.tape(), rmsm_forward(g, blk, v[0]), 21); },
                    {x}, Mode::Train, o));
            }
            {
                const RmsmBlock blk("rmsm", 3, 3, 3, true);
                auto p = block_params(blk, seed);
                auto x = random_tensor(Shape{2, 3, 7, 6}, rng);
                rmsm_ds.push_back(gradcheck_model(
                    p, [&blk](Graph<double>& g, std::span<const Var> v) { return project(g.tape(), rmsm_forward(g, blk, v[0]), 22); },
                    {x}, Mode::Train, o));
            }
            {
                const DframBlock blk("dfram", 4, 8, 2);
                auto p = block_params(blk, seed);
                auto s = random_tensor(Shape{1, 4, 6, 6}, rng);
                auto d = random_tensor(Shape{1, 8, 3, 3}, rng);
                df.push_back(gradcheck_model(
                    p,
                    [&blk](Graph<double>& g, std::span<const Var> v) {
                        return project(g.tape(), dfram_forward(g, blk, v[0], v[1]), 23);
                    },
                    {s, d}, Mode::Train, o));
            }
            {
                const EframBlock blk("efram", 4, 2);
                auto p = block_params(blk, seed);
                auto s = random_tensor(Shape{1, 4, 6, 6}, rng);
                ef.push_back(gradcheck_model(
                    p, [&blk](Graph<double>& g, std::span<const Var> v) { return project(g.tape(), efram_forward(g, blk, v[0]), 24); },
                    {s}, Mode::Train, o));
            }
        }
        const std::string tag = " x" + std::to_string(seeds) + " seeds";
        record("RMSM" + tag, merge(rmsm, 0.99));
        record("RMSM downsample" + tag, merge(rmsm_ds, 0.99));
        record("DF-RAM" + tag, merge(df, 0.99));
        record("EF-RAM" + tag, merge(ef, 0.99));
    }

    void full_model() {
        NetworkConfig cfg;
        cfg.base_ch = 4;
        const Network net(cfg);
        auto params = net.init<double>(opts_.seed);
        Rng rng = Rng::derive(opts_.seed, 4);
        for (auto& e : params.entries())
            if (e.kind == ParamKind::Bias || e.kind == ParamKind::Beta)
                for (auto& v : e.value.data()) v += rng.uniform(-0.1, 0.1);
        auto x = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
        Tensord y(Shape{1, 1, 16, 16});
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) y(0, 0, i, j) = (i - 8) * (i - 8) + (j - 7) * (j - 7) < 20 ? 1.0 : 0.0;
        GradcheckOptions o;
        o.tolerance = 2e-3;
        o.min_pass_fraction = 0.99;
        o.max_coordinates = opts_.model_coordinates;
        o.seed = opts_.seed;
        record("full model base_ch 4, combined loss",
            gradcheck_model(
                params,
                [&net, &y](Graph<double>& g, std::span<const Var> v) {
                    return combined_loss(g.tape(), net.forward(g, v[0]), y);
                },
                {x}, Mode::Train, o));
    }

    std::vector<SuiteCase> finish() { return std::move(cases_); }

private:
    SuiteOptions opts_;
    const std::function<void(const SuiteCase&)>& cb_;
    std::vector<SuiteCase> cases_;
};

}  // namespace

std::vector<SuiteCase> run_gradcheck_suite(const SuiteOptions& options,
                                           const std::function<void(const SuiteCase&)>& on_case) {
    Runner run(options, on_case);
    run.primitives();
    run.losses();
    run.blocks();
    if (options.scale == SuiteScale::Toy) run.full_model();
    return run.finish();
}

}  // namespace rmsd
