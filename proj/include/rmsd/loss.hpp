#pragma once

#include "rmsd/tape.hpp"

namespace rmsd {

inline constexpr double kFocalGamma = 2.0;
inline constexpr double kFocalClamp = 1e-7;

/// Smoothed soft dice over every element of the batch:
///   1 - (2 sum(p y) + 1) / (sum(p) + sum(y) + 1)
template <typename Scalar>
double dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

/// (2 sum(p y) + 1) / (sum(p) + sum(y) + 1); the complement of dice_loss.
template <typename Scalar>
double soft_dice(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

/// Mean over elements of -y (1-p)^g log p - p^g (1-y) log(1-p), with p
/// clamped to [kFocalClamp, 1 - kFocalClamp].
template <typename Scalar>
double focal_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double gamma = kFocalGamma);

template <typename Scalar>
double combined_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double gamma = kFocalGamma) {
    return dice_loss(pred, target) + focal_loss(pred, target, gamma);
}

template <typename Scalar>
Var dice_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target);
template <typename Scalar>
Var focal_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target, double gamma = kFocalGamma);
template <typename Scalar>
Var combined_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target, double gamma = kFocalGamma);

}  // namespace rmsd
