#pragma once

// Taped versions of the primitives in ops.hpp.

#include <span>

#include "rmsd/ops.hpp"
#include "rmsd/tape.hpp"

namespace rmsd {

template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var x, Var kernel, Var bias, int stride = 1);

/// Running statistics are read in inference mode and updated in training mode.
template <typename Scalar>
Var batch_norm2d(Tape<Scalar>& tape, Var x, Var gamma, Var beta, Tensor<Scalar>& running_mean,
                 Tensor<Scalar>& running_var, double epsilon, double momentum, Mode mode);

template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var avg_pool2(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var bilinear_upsample(Tape<Scalar>& tape, Var x, int out_h, int out_w);
template <typename Scalar>
Var concat_channels(Tape<Scalar>& tape, std::span<const Var> parts);
template <typename Scalar>
Var slice_channels(Tape<Scalar>& tape, Var x, int begin, int end);
template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x);
template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b);
template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b);
template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, double factor);
template <typename Scalar>
Var dense(Tape<Scalar>& tape, Var x, Var weight, Var bias);
/// Sum of all elements as a 1x1x1x1 scalar.
template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x);

}  // namespace rmsd
