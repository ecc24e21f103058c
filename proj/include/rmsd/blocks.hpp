#pragma once

// Residual multi-scale block and the two feature-refinement attention modules.

#include <array>
#include <string>

#include "rmsd/layers.hpp"

namespace rmsd {

/// Squeezed width for reduce ratio r, never below one channel.
constexpr int reduced(int channels, int ratio) { return channels / ratio > 0 ? channels / ratio : 1; }

/// Kernel sizes of the four parallel spatial-attention convolutions.
inline constexpr std::array<int, 4> kSpatialKernels{3, 5, 7, 9};

/// Three parallel BN'd convolutions (1x1, 3x3, 5x5) are concatenated and
/// bottlenecked by an un-normalised 1x1 conv; the block input is
/// concatenated in front of the result.
///
/// With downsample, the bottleneck conv has stride 2 and the residual path is
/// 2x2 average pooled to the same size.
struct RmsmBlock {
    std::string name;
    int in_ch = 0;
    int branch_ch = 0;
    int bottleneck_ch = 0;
    bool downsample = false;
    bool branch_relu = true;  // relu after each branch batch norm

    std::array<ConvSpec, 3> branches;
    std::array<BatchNormSpec, 3> norms;
    ConvSpec bottleneck;

    RmsmBlock() = default;
    RmsmBlock(std::string name, int in_ch, int branch_ch, int bottleneck_ch, bool downsample,
              bool branch_relu = true);

    /// Channel-doubling block: every branch and the bottleneck emit in_ch.
    static RmsmBlock doubling(std::string name, int in_ch, bool downsample, bool branch_relu = true) {
        return RmsmBlock(std::move(name), in_ch, in_ch, in_ch, downsample, branch_relu);
    }

    int out_ch() const { return in_ch + bottleneck_ch; }
    std::size_t parameter_count() const;
};

/// Refines an encoder skip feature S with gates derived from S and a deeper
/// decoder feature D.
struct DframBlock {
    std::string name;
    int skip_ch = 0;
    int decoder_ch = 0;
    int reduce_ratio = 16;

    DenseSpec mlp_hidden;  // decoder_ch -> decoder_ch / r
    DenseSpec mlp_out;     // -> skip_ch
    ConvSpec squeeze_skip;
    ConvSpec squeeze_decoder;
    std::array<ConvSpec, 4> spatial;  // each (squeezed S + squeezed D) -> 1

    DframBlock() = default;
    DframBlock(std::string name, int skip_ch, int decoder_ch, int reduce_ratio = 16);

    std::size_t parameter_count() const;
};

/// Refines a post-upsampling decoder feature from itself alone.
struct EframBlock {
    std::string name;
    int ch = 0;
    int reduce_ratio = 16;

    DenseSpec mlp_hidden;
    DenseSpec mlp_out;
    ConvSpec squeeze;
    std::array<ConvSpec, 4> spatial;

    EframBlock() = default;
    EframBlock(std::string name, int ch, int reduce_ratio = 16);

    std::size_t parameter_count() const;
};

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const RmsmBlock& block, Rng& rng);
template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const DframBlock& block, Rng& rng);
template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const EframBlock& block, Rng& rng);

/// [x (pooled if downsampling), bottleneck(concat(BN(conv1 x), BN(conv3 x), BN(conv5 x)))]
template <typename Scalar>
Var rmsm_forward(Graph<Scalar>& g, const RmsmBlock& block, Var x);

/// sigmoid(MLP(GAP(d))), shape (B, skip_ch, 1, 1).
template <typename Scalar>
Var dfram_channel_attention(Graph<Scalar>& g, const DframBlock& block, Var d);
/// sigmoid of the summed 3/5/7/9 convolutions over [squeeze(s), upsample(squeeze(d))],
/// shape (B, 1, H_s, W_s).
template <typename Scalar>
Var dfram_spatial_attention(Graph<Scalar>& g, const DframBlock& block, Var s, Var d);
/// s * channel gate * spatial gate.
template <typename Scalar>
Var dfram_forward(Graph<Scalar>& g, const DframBlock& block, Var s, Var d);

template <typename Scalar>
Var efram_channel_attention(Graph<Scalar>& g, const EframBlock& block, Var s);
template <typename Scalar>
Var efram_spatial_attention(Graph<Scalar>& g, const EframBlock& block, Var s);
template <typename Scalar>
Var efram_forward(Graph<Scalar>& g, const EframBlock& block, Var s);

}  // namespace rmsd
