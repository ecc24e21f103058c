#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "rmsd/blocks.hpp"

namespace rmsd {

struct NetworkConfig {
    int in_ch = 3;
    int base_ch = 16;
    int levels = 4;  // fixed: three strided encoder stages plus the bridge
    int reduce_ratio = 16;
    int head_out = 1;
    bool rmsm_branch_relu = true;
    /// Apply EF-RAM to each decoder RMSM output instead of to the upsampled
    /// feature before concatenation.
    bool efram_after_rmsm = false;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;

    void validate() const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// 4-level encoder/bridge/decoder segmentation network.
///
/// Widths for base width C (RMSM blocks double their input):
///   stem    3x3 conv+BN+relu    in_ch -> C      at H
///   enc1..3 strided RMSM        C -> 2C -> 4C -> 8C, at H/2, H/4, H/8
///   bridge  RMSM                8C -> 16C       at H/8
///   dec1    up(16C) -> 4C, refine, concat with DF(enc2) -> 8C, RMSM -> 16C at H/4
///   dec2    up(16C) -> 2C, concat with DF(enc1) -> 4C, RMSM -> 8C        at H/2
///   dec3    up(8C)  -> C,  concat with DF(stem) -> 2C, RMSM -> 4C        at H
///   head    1x1 conv 4C -> head_out, sigmoid
/// "up" is bilinear x2 followed by a 3x3 conv+BN+relu mapping to the skip
/// width; EF-RAM refines its output and DF-RAM refines the skip using the
/// pre-upsampling decoder feature.
class Network {
public:
    struct DecoderStage {
        ConvSpec up_conv;
        BatchNormSpec up_norm;
        EframBlock efram;
        DframBlock dfram;
        RmsmBlock rmsm;
    };

    explicit Network(NetworkConfig cfg);

    const NetworkConfig& config() const { return cfg_; }
    const ConvSpec& stem() const { return stem_; }
    const std::array<RmsmBlock, 3>& encoders() const { return encoders_; }
    const RmsmBlock& bridge() const { return bridge_; }
    const std::array<DecoderStage, 3>& decoders() const { return decoders_; }
    const ConvSpec& head() const { return head_; }

    /// Learnable scalar count from the block specs.
    std::size_t parameter_count() const;

    template <typename Scalar>
    ModelParams<Scalar> init(std::uint64_t seed) const;

    /// Probability map (B, head_out, H, W). H and W must be divisible by 8.
    template <typename Scalar>
    Var forward(Graph<Scalar>& g, Var x) const;

    BatchNormSettings bn_settings() const { return {cfg_.bn_epsilon, cfg_.bn_momentum}; }

private:
    NetworkConfig cfg_;
    ConvSpec stem_;
    BatchNormSpec stem_norm_;
    std::array<RmsmBlock, 3> encoders_;
    RmsmBlock bridge_;
    std::array<DecoderStage, 3> decoders_;
    ConvSpec head_;
};

template <typename Scalar>
ModelParams<Scalar> build_model(const NetworkConfig& cfg, std::uint64_t seed) {
    return Network(cfg).init<Scalar>(seed);
}

/// Untaped convenience forward pass. Training mode updates running statistics.
template <typename Scalar>
Tensor<Scalar> forward(const Network& net, ModelParams<Scalar>& params, const Tensor<Scalar>& x, Mode mode);

}  // namespace rmsd
