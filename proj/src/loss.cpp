#include "rmsd/loss.hpp"

#include <algorithm>
#include <cmath>

#include "rmsd/autodiff.hpp"

namespace rmsd {
namespace {

template <typename Scalar>
void check_pair(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, const char* who) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(who) + ": prediction " + pred.shape().str() + " and target " +
                         target.shape().str() + " differ");
}

struct DiceSums {
    double intersection = 0.0;
    double pred = 0.0;
    double target = 0.0;
};

template <typename Scalar>
DiceSums dice_sums(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    DiceSums s;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s.intersection += static_cast<double>(pred[i]) * target[i];
        s.pred += pred[i];
        s.target += target[i];
    }
    return s;
}

double clamp_prob(double p) { return std::clamp(p, kFocalClamp, 1.0 - kFocalClamp); }

double focal_term(double p, double y, double gamma) {
    p = clamp_prob(p);
    return -y * std::pow(1.0 - p, gamma) * std::log(p) - std::pow(p, gamma) * (1.0 - y) * std::log(1.0 - p);
}

// d focal_term / dp; zero where the clamp is active.
double focal_slope(double raw, double y, double gamma) {
    if (raw < kFocalClamp || raw > 1.0 - kFocalClamp) return 0.0;
    const double p = raw;
    const double q = 1.0 - p;
    double pos = -std::pow(q, gamma) / p;
    double neg = std::pow(p, gamma) / q;
    if (gamma != 0.0) {
        pos += gamma * std::pow(q, gamma - 1.0) * std::log(p);
        neg -= gamma * std::pow(p, gamma - 1.0) * std::log(q);
    }
    return y * pos + (1.0 - y) * neg;
}

}  // namespace

template <typename Scalar>
double soft_dice(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    check_pair(pred, target, "soft_dice");
    const DiceSums s = dice_sums(pred, target);
    return (2.0 * s.intersection + 1.0) / (s.pred + s.target + 1.0);
}

template <typename Scalar>
double dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    check_pair(pred, target, "dice_loss");
    return 1.0 - soft_dice(pred, target);
}

template <typename Scalar>
double focal_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double gamma) {
    check_pair(pred, target, "focal_loss");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += focal_term(pred[i], target[i], gamma);
    return total / static_cast<double>(pred.size());
}

template <typename Scalar>
Var dice_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target) {
    const Tensor<Scalar>& p = tape.value(pred);
    check_pair(p, target, "dice_loss");
    const DiceSums s = dice_sums(p, target);
    const double num = 2.0 * s.intersection + 1.0;
    const double den = s.pred + s.target + 1.0;
    return tape.record(Tensor<Scalar>::scalar(static_cast<Scalar>(1.0 - num / den)), {pred},
                       [pred, target, num, den](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           // d/dp_i [1 - num/den] = -(2 y_i den - num) / den^2
                           const double up = g.item();
                           Tensor<Scalar> dp(target.shape());
                           for (std::size_t i = 0; i < dp.size(); ++i)
                               dp[i] = static_cast<Scalar>(-up * (2.0 * target[i] * den - num) / (den * den));
                           t.accumulate(pred, std::move(dp));
                       });
}

template <typename Scalar>
Var focal_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target, double gamma) {
    const Tensor<Scalar>& p = tape.value(pred);
    const double value = focal_loss(p, target, gamma);
    return tape.record(Tensor<Scalar>::scalar(static_cast<Scalar>(value)), {pred},
                       [pred, target, gamma](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           const Tensor<Scalar>& pv = t.value(pred);
                           const double k = g.item() / static_cast<double>(pv.size());
                           Tensor<Scalar> dp(pv.shape());
                           for (std::size_t i = 0; i < dp.size(); ++i)
                               dp[i] = static_cast<Scalar>(k * focal_slope(pv[i], target[i], gamma));
                           t.accumulate(pred, std::move(dp));
                       });
}

template <typename Scalar>
Var combined_loss(Tape<Scalar>& tape, Var pred, const Tensor<Scalar>& target, double gamma) {
    return add(tape, dice_loss(tape, pred, target), focal_loss(tape, pred, target, gamma));
}

#define RMSD_INSTANTIATE_LOSS(S)                                                 \
    template double soft_dice(const Tensor<S>&, const Tensor<S>&);              \
    template double dice_loss(const Tensor<S>&, const Tensor<S>&);              \
    template double focal_loss(const Tensor<S>&, const Tensor<S>&, double);     \
    template Var dice_loss(Tape<S>&, Var, const Tensor<S>&);                    \
    template Var focal_loss(Tape<S>&, Var, const Tensor<S>&, double);           \
    template Var combined_loss(Tape<S>&, Var, const Tensor<S>&, double);

RMSD_INSTANTIATE_LOSS(float)
RMSD_INSTANTIATE_LOSS(double)

}  // namespace rmsd
