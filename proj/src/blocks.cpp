#include "rmsd/blocks.hpp"

namespace rmsd {

RmsmBlock::RmsmBlock(std::string name_, int in, int branch, int bottleneck_out, bool ds, bool relu_)
    : name(std::move(name_)), in_ch(in), branch_ch(branch), bottleneck_ch(bottleneck_out), downsample(ds),
      branch_relu(relu_) {
    if (in < 1 || branch < 1 || bottleneck_out < 1) throw ContractError("RMSM " + name + ": widths must be positive");
    constexpr std::array<int, 3> kernels{1, 3, 5};
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string k = std::to_string(kernels[i]);
        branches[i] = ConvSpec{name + ".conv" + k, in, branch, kernels[i], 1};
        norms[i] = BatchNormSpec{name + ".bn" + k, branch};
    }
    bottleneck = ConvSpec{name + ".bottleneck", 3 * branch, bottleneck_out, 1, ds ? 2 : 1};
}

std::size_t RmsmBlock::parameter_count() const {
    std::size_t n = bottleneck.parameter_count();
    for (std::size_t i = 0; i < 3; ++i) n += branches[i].parameter_count() + norms[i].parameter_count();
    return n;
}

DframBlock::DframBlock(std::string name_, int skip, int decoder, int ratio)
    : name(std::move(name_)), skip_ch(skip), decoder_ch(decoder), reduce_ratio(ratio) {
    if (skip < 1 || decoder < 1 || ratio < 1) throw ContractError("DF-RAM " + name + ": invalid widths");
    const int hidden = reduced(decoder, ratio);
    mlp_hidden = DenseSpec{name + ".mlp1", decoder, hidden};
    mlp_out = DenseSpec{name + ".mlp2", hidden, skip};
    squeeze_skip = ConvSpec{name + ".squeeze_skip", skip, reduced(skip, ratio), 1, 1};
    squeeze_decoder = ConvSpec{name + ".squeeze_decoder", decoder, reduced(decoder, ratio), 1, 1};
    const int cat = squeeze_skip.out_ch + squeeze_decoder.out_ch;
    for (std::size_t i = 0; i < kSpatialKernels.size(); ++i) {
        const int k = kSpatialKernels[i];
        spatial[i] = ConvSpec{name + ".spatial" + std::to_string(k), cat, 1, k, 1};
    }
}

std::size_t DframBlock::parameter_count() const {
    std::size_t n = mlp_hidden.parameter_count() + mlp_out.parameter_count() + squeeze_skip.parameter_count() +
                    squeeze_decoder.parameter_count();
    for (const auto& c : spatial) n += c.parameter_count();
    return n;
}

EframBlock::EframBlock(std::string name_, int channels, int ratio)
    : name(std::move(name_)), ch(channels), reduce_ratio(ratio) {
    if (channels < 1 || ratio < 1) throw ContractError("EF-RAM " + name + ": invalid widths");
    const int hidden = reduced(channels, ratio);
    mlp_hidden = DenseSpec{name + ".mlp1", channels, hidden};
    mlp_out = DenseSpec{name + ".mlp2", hidden, channels};
    squeeze = ConvSpec{name + ".squeeze", channels, reduced(channels, ratio), 1, 1};
    for (std::size_t i = 0; i < kSpatialKernels.size(); ++i) {
        const int k = kSpatialKernels[i];
        spatial[i] = ConvSpec{name + ".spatial" + std::to_string(k), squeeze.out_ch, 1, k, 1};
    }
}

std::size_t EframBlock::parameter_count() const {
    std::size_t n = mlp_hidden.parameter_count() + mlp_out.parameter_count() + squeeze.parameter_count();
    for (const auto& c : spatial) n += c.parameter_count();
    return n;
}

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const RmsmBlock& block, Rng& rng) {
    for (std::size_t i = 0; i < 3; ++i) {
        init_params(params, block.branches[i], rng);
        init_params(params, block.norms[i], rng);
    }
    init_params(params, block.bottleneck, rng);
}

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const DframBlock& block, Rng& rng) {
    init_params(params, block.mlp_hidden, rng);
    init_params(params, block.mlp_out, rng);
    init_params(params, block.squeeze_skip, rng);
    init_params(params, block.squeeze_decoder, rng);
    for (const auto& c : block.spatial) init_params(params, c, rng);
}

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const EframBlock& block, Rng& rng) {
    init_params(params, block.mlp_hidden, rng);
    init_params(params, block.mlp_out, rng);
    init_params(params, block.squeeze, rng);
    for (const auto& c : block.spatial) init_params(params, c, rng);
}

namespace {

void expect_channels(const std::string& who, const Shape& s, int channels) {
    if (s.c != channels)
        throw ShapeError(who + ": expected " + std::to_string(channels) + " channels, got input " + s.str());
}

template <typename Scalar>
Var channel_gate(Graph<Scalar>& g, const DenseSpec& hidden, const DenseSpec& out, Var x) {
    auto& t = g.tape();
    Var pooled = global_avg_pool(t, x);
    Var h = relu(t, apply(g, hidden, pooled));
    return sigmoid(t, apply(g, out, h));
}

template <typename Scalar>
Var spatial_gate(Graph<Scalar>& g, const std::array<ConvSpec, 4>& convs, Var squeezed) {
    auto& t = g.tape();
    Var acc = apply(g, convs[0], squeezed);
    for (std::size_t i = 1; i < convs.size(); ++i) acc = add(t, acc, apply(g, convs[i], squeezed));
    return sigmoid(t, acc);
}

}  // namespace

template <typename Scalar>
Var rmsm_forward(Graph<Scalar>& g, const RmsmBlock& block, Var x) {
    auto& t = g.tape();
    expect_channels("RMSM " + block.name, t.shape(x), block.in_ch);
    g.trace(block.name + ".in", x);
    std::array<Var, 3> parts;
    for (std::size_t i = 0; i < 3; ++i) {
        Var y = apply(g, block.norms[i], apply(g, block.branches[i], x));
        parts[i] = block.branch_relu ? relu(t, y) : y;
    }
    Var merged = apply(g, block.bottleneck, concat_channels<Scalar>(t, parts));
    Var residual = block.downsample ? avg_pool2(t, x) : x;
    const std::array<Var, 2> out{residual, merged};
    Var y = concat_channels<Scalar>(t, out);
    g.trace(block.name + ".out", y);
    return y;
}

template <typename Scalar>
Var dfram_channel_attention(Graph<Scalar>& g, const DframBlock& block, Var d) {
    expect_channels("DF-RAM " + block.name + " decoder feature", g.tape().shape(d), block.decoder_ch);
    return channel_gate(g, block.mlp_hidden, block.mlp_out, d);
}

template <typename Scalar>
Var dfram_spatial_attention(Graph<Scalar>& g, const DframBlock& block, Var s, Var d) {
    auto& t = g.tape();
    const Shape ss = t.shape(s);
    const Shape ds = t.shape(d);
    expect_channels("DF-RAM " + block.name + " skip feature", ss, block.skip_ch);
    expect_channels("DF-RAM " + block.name + " decoder feature", ds, block.decoder_ch);
    if (ds.h > ss.h || ds.w > ss.w || ds.b != ss.b)
        throw ShapeError("DF-RAM " + block.name + ": decoder feature " + ds.str() +
                         " is larger than skip feature " + ss.str());
    Var sr = apply(g, block.squeeze_skip, s);
    Var dr = bilinear_upsample(t, apply(g, block.squeeze_decoder, d), ss.h, ss.w);
    const std::array<Var, 2> cat{sr, dr};
    return spatial_gate(g, block.spatial, concat_channels<Scalar>(t, cat));
}

template <typename Scalar>
Var dfram_forward(Graph<Scalar>& g, const DframBlock& block, Var s, Var d) {
    auto& t = g.tape();
    Var ch = dfram_channel_attention(g, block, d);
    Var sp = dfram_spatial_attention(g, block, s, d);
    return mul(t, mul(t, s, ch), sp);
}

template <typename Scalar>
Var efram_channel_attention(Graph<Scalar>& g, const EframBlock& block, Var s) {
    expect_channels("EF-RAM " + block.name, g.tape().shape(s), block.ch);
    return channel_gate(g, block.mlp_hidden, block.mlp_out, s);
}

template <typename Scalar>
Var efram_spatial_attention(Graph<Scalar>& g, const EframBlock& block, Var s) {
    expect_channels("EF-RAM " + block.name, g.tape().shape(s), block.ch);
    return spatial_gate(g, block.spatial, apply(g, block.squeeze, s));
}

template <typename Scalar>
Var efram_forward(Graph<Scalar>& g, const EframBlock& block, Var s) {
    auto& t = g.tape();
    Var sp = efram_spatial_attention(g, block, s);
    Var ch = efram_channel_attention(g, block, s);
    return mul(t, mul(t, s, ch), sp);
}

#define RMSD_INSTANTIATE_BLOCKS(S)                                              \
    template void init_params(ModelParams<S>&, const RmsmBlock&, Rng&);       \
    template void init_params(ModelParams<S>&, const DframBlock&, Rng&);      \
    template void init_params(ModelParams<S>&, const EframBlock&, Rng&);      \
    template Var rmsm_forward(Graph<S>&, const RmsmBlock&, Var);              \
    template Var dfram_channel_attention(Graph<S>&, const DframBlock&, Var);  \
    template Var dfram_spatial_attention(Graph<S>&, const DframBlock&, Var, Var); \
    template Var dfram_forward(Graph<S>&, const DframBlock&, Var, Var);       \
    template Var efram_channel_attention(Graph<S>&, const EframBlock&, Var);  \
    template Var efram_spatial_attention(Graph<S>&, const EframBlock&, Var);  \
    template Var efram_forward(Graph<S>&, const EframBlock&, Var);

RMSD_INSTANTIATE_BLOCKS(float)
RMSD_INSTANTIATE_BLOCKS(double)

}  // namespace rmsd
