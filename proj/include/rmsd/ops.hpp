#pragma once

// Forward and backward kernels for the differentiable primitives.
// These work on plain tensors; autodiff.hpp wires them onto a tape.

#include <vector>

#include "rmsd/tensor.hpp"

namespace rmsd {

enum class Mode { Train, Infer };

/// Convolution weights. kernel is (out_ch, in_ch, k, k) with odd square k.
template <typename Scalar>
struct ConvParams {
    Tensor<Scalar> kernel;
    Tensor<Scalar> bias;  // (1, out_ch, 1, 1)
    int stride = 1;
};

template <typename Scalar>
struct BatchNormParams {
    Tensor<Scalar> gamma;  // all (1, N, 1, 1)
    Tensor<Scalar> beta;
    Tensor<Scalar> running_mean;
    Tensor<Scalar> running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;
    Mode mode = Mode::Train;
};

/// Output extent and leading pad of a "same" convolution along one axis.
struct SamePadding {
    int out = 0;
    int pad = 0;
};
SamePadding same_padding(int in, int kernel, int stride);

namespace ops {

template <typename Scalar>
struct ConvGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> kernel;
    Tensor<Scalar> bias;
};

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, int stride);
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, int stride,
                                  const Tensor<Scalar>& grad_out);

/// Per-channel statistics saved by the training-mode forward pass.
template <typename Scalar>
struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
    std::vector<double> inv_std;
    std::size_t count = 0;    // values per channel
};

template <typename Scalar>
struct BatchNormGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> gamma;
    Tensor<Scalar> beta;
};

/// Training-mode normalization with batch statistics. Returns the output and
/// writes the statistics used to `stats` (if non-null).
template <typename Scalar>
Tensor<Scalar> batch_norm_train(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                const Tensor<Scalar>& beta, double epsilon, BatchStats<Scalar>* stats);
template <typename Scalar>
Tensor<Scalar> batch_norm_infer(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                const Tensor<Scalar>& beta, const Tensor<Scalar>& running_mean,
                                const Tensor<Scalar>& running_var, double epsilon);
template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_train_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                                 const BatchStats<Scalar>& stats,
                                                 const Tensor<Scalar>& grad_out);
/// Gradient of the inference-mode transform w.r.t. input, gamma and beta.
template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_infer_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                                 const Tensor<Scalar>& running_mean,
                                                 const Tensor<Scalar>& running_var, double epsilon,
                                                 const Tensor<Scalar>& grad_out);
/// Momentum update of running statistics from a batch (unbiased variance).
template <typename Scalar>
void update_running_stats(const BatchStats<Scalar>& stats, double momentum, Tensor<Scalar>& running_mean,
                          Tensor<Scalar>& running_var);

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& grad_out);

/// 2x2 stride-2 average pooling; odd edges average the in-bounds cells only.
template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> avg_pool2_backward(const Shape& input_shape, const Tensor<Scalar>& grad_out);

/// Half-pixel-centre bilinear interpolation to a larger (or equal) size.
template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, int out_h, int out_w);
template <typename Scalar>
Tensor<Scalar> bilinear_upsample_backward(const Shape& input_shape, const Tensor<Scalar>& grad_out);

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>* const> parts);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// Shape produced by broadcasting a against b; size-1 dimensions repeat.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Sums `grad` over the dimensions in which `target` was broadcast.
template <typename Scalar>
Tensor<Scalar> reduce_to(const Tensor<Scalar>& grad, const Shape& target);

/// Affine map of (B, N, 1, 1) by weight (M, N, 1, 1) and bias (1, M, 1, 1).
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);
template <typename Scalar>
ConvGrads<Scalar> dense_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                 const Tensor<Scalar>& grad_out);

}  // namespace ops

/// Plain-tensor convenience wrappers matching the parameter-bundle types.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvParams<Scalar>& p) {
    return ops::conv2d(x, p.kernel, p.bias, p.stride);
}

/// Training mode normalises with batch statistics and updates the running
/// statistics; inference mode uses the running statistics only.
template <typename Scalar>
Tensor<Scalar> batch_norm2d(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p);

}  // namespace rmsd
