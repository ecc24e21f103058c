#include "rmsd/network.hpp"

namespace rmsd {

void NetworkConfig::validate() const {
    if (in_ch < 1 || base_ch < 1 || head_out < 1 || reduce_ratio < 1)
        throw ContractError("network config: channel counts and reduce ratio must be positive");
    if (levels != 4) throw ContractError("network config: only 4 levels are supported");
    if (!(bn_epsilon > 0.0) || !(bn_momentum > 0.0 && bn_momentum < 1.0))
        throw ContractError("network config: batch-norm epsilon must be > 0 and momentum in (0,1)");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"in_ch", c.in_ch},
                       {"base_ch", c.base_ch},
                       {"levels", c.levels},
                       {"reduce_ratio", c.reduce_ratio},
                       {"head_out", c.head_out},
                       {"rmsm_branch_relu", c.rmsm_branch_relu},
                       {"efram_after_rmsm", c.efram_after_rmsm},
                       {"bn_epsilon", c.bn_epsilon},
                       {"bn_momentum", c.bn_momentum}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    NetworkConfig d;
    c.in_ch = j.value("in_ch", d.in_ch);
    c.base_ch = j.value("base_ch", d.base_ch);
    c.levels = j.value("levels", d.levels);
    c.reduce_ratio = j.value("reduce_ratio", d.reduce_ratio);
    c.head_out = j.value("head_out", d.head_out);
    c.rmsm_branch_relu = j.value("rmsm_branch_relu", d.rmsm_branch_relu);
    c.efram_after_rmsm = j.value("efram_after_rmsm", d.efram_after_rmsm);
    c.bn_epsilon = j.value("bn_epsilon", d.bn_epsilon);
    c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
}

Network::Network(NetworkConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.base_ch;
    const int r = cfg_.reduce_ratio;
    const bool relu = cfg_.rmsm_branch_relu;

    stem_ = ConvSpec{"stem.conv", cfg_.in_ch, c, 3, 1};
    stem_norm_ = BatchNormSpec{"stem.bn", c};

    int width = c;
    std::array<int, 3> skip_widths{};
    for (int i = 0; i < 3; ++i) {
        skip_widths[i] = width;
        encoders_[i] = RmsmBlock::doubling("enc" + std::to_string(i + 1), width, true, relu);
        width = encoders_[i].out_ch();
    }
    // Skips at H, H/2, H/4 are the stem output and the first two encoder outputs.
    bridge_ = RmsmBlock::doubling("bridge", width, false, relu);
    width = bridge_.out_ch();

    for (int i = 0; i < 3; ++i) {
        const std::string p = "dec" + std::to_string(i + 1);
        const int skip = skip_widths[2 - i];
        DecoderStage& st = decoders_[i];
        st.up_conv = ConvSpec{p + ".up_conv", width, skip, 3, 1};
        st.up_norm = BatchNormSpec{p + ".up_bn", skip};
        st.dfram = DframBlock(p + ".dfram", skip, width, r);
        st.rmsm = RmsmBlock::doubling(p + ".rmsm", 2 * skip, false, relu);
        st.efram = EframBlock(p + ".efram", cfg_.efram_after_rmsm ? st.rmsm.out_ch() : skip, r);
        width = st.rmsm.out_ch();
    }
    head_ = ConvSpec{"head", width, cfg_.head_out, 1, 1};
}

std::size_t Network::parameter_count() const {
    std::size_t n = stem_.parameter_count() + stem_norm_.parameter_count() + head_.parameter_count();
    for (const auto& e : encoders_) n += e.parameter_count();
    n += bridge_.parameter_count();
    for (const auto& d : decoders_)
        n += d.up_conv.parameter_count() + d.up_norm.parameter_count() + d.efram.parameter_count() +
             d.dfram.parameter_count() + d.rmsm.parameter_count();
    return n;
}

template <typename Scalar>
ModelParams<Scalar> Network::init(std::uint64_t seed) const {
    Rng rng(seed);
    ModelParams<Scalar> p;
    init_params(p, stem_, rng);
    init_params(p, stem_norm_, rng);
    for (const auto& e : encoders_) init_params(p, e, rng);
    init_params(p, bridge_, rng);
    for (const auto& d : decoders_) {
        init_params(p, d.up_conv, rng);
        init_params(p, d.up_norm, rng);
        init_params(p, d.efram, rng);
        init_params(p, d.dfram, rng);
        init_params(p, d.rmsm, rng);
    }
    init_params(p, head_, rng);
    return p;
}

template <typename Scalar>
Var Network::forward(Graph<Scalar>& g, Var x) const {
    auto& t = g.tape();
    const Shape in = t.shape(x);
    if (in.c != cfg_.in_ch)
        throw ShapeError("network: expected " + std::to_string(cfg_.in_ch) + " input channels, got " + in.str());
    if (in.h % 8 != 0 || in.w % 8 != 0)
        throw ShapeError("network: input height and width must be divisible by 8 (three stride-2 stages), got " +
                         in.str());

    Var h = relu(t, apply(g, stem_norm_, apply(g, stem_, x)));
    std::array<Var, 3> skips{};
    for (int i = 0; i < 3; ++i) {
        skips[i] = h;
        h = rmsm_forward(g, encoders_[i], h);
    }
    h = rmsm_forward(g, bridge_, h);

    for (int i = 0; i < 3; ++i) {
        const DecoderStage& st = decoders_[i];
        Var skip = skips[2 - i];
        const Shape ss = t.shape(skip);
        Var up = bilinear_upsample(t, h, ss.h, ss.w);
        up = relu(t, apply(g, st.up_norm, apply(g, st.up_conv, up)));
        if (!cfg_.efram_after_rmsm) up = efram_forward(g, st.efram, up);
        Var refined = dfram_forward(g, st.dfram, skip, h);
        const std::array<Var, 2> cat{refined, up};
        h = rmsm_forward(g, st.rmsm, concat_channels<Scalar>(t, cat));
        if (cfg_.efram_after_rmsm) h = efram_forward(g, st.efram, h);
    }
    return sigmoid(t, apply(g, head_, h));
}

template <typename Scalar>
Tensor<Scalar> forward(const Network& net, ModelParams<Scalar>& params, const Tensor<Scalar>& x, Mode mode) {
    Tape<Scalar> tape;
    Graph<Scalar> g(tape, params, mode, net.bn_settings());
    g.track_grads(false);
    Var in = tape.constant(x);
    return tape.value(net.forward(g, in));
}

template ModelParams<float> Network::init<float>(std::uint64_t) const;
template ModelParams<double> Network::init<double>(std::uint64_t) const;
template Var Network::forward<float>(Graph<float>&, Var) const;
template Var Network::forward<double>(Graph<double>&, Var) const;
template Tensor<float> forward(const Network&, ModelParams<float>&, const Tensor<float>&, Mode);
template Tensor<double> forward(const Network&, ModelParams<double>&, const Tensor<double>&, Mode);

}  // namespace rmsd
