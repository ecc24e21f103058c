#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rmsd/tape.hpp"

namespace rmsd {

struct GradcheckOptions {
    /// Central-difference h. About cbrt(double eps); larger steps straddle
    /// relu kinks inside deep models.
    double step = 1e-5;
    double tolerance = 1e-3;
    /// Fraction of checked coordinates that must be within tolerance.
    double min_pass_fraction = 1.0;
    /// Upper bound on coordinates checked; 0 checks every coordinate.
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 0;
    /// Denominators below this are clamped, so coordinates whose analytic and
    /// numeric gradients are both negligible compare by absolute error.
    double denominator_floor = 1e-6;
};

struct GradcheckFailure {
    std::size_t input = 0;  // index into the checked points
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradcheckReport {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    bool passed = false;
    std::vector<GradcheckFailure> failures;  // first few out-of-tolerance coordinates

    double pass_fraction() const {
        return checked == 0 ? 1.0 : 1.0 - static_cast<double>(failed) / static_cast<double>(checked);
    }
    std::string summary() const;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Builds a scalar from taped inputs. Called once for the analytic gradient
/// and twice per checked coordinate.
template <typename Scalar>
using TapedFunction = std::function<Var(Tape<Scalar>&, std::span<const Var>)>;

/// Compares the tape's gradient of `f` at `points` against central
/// differences. Coordinates are sampled uniformly over all inputs when
/// max_coordinates is set.
template <typename Scalar>
GradcheckReport gradcheck(const TapedFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& points,
                          const GradcheckOptions& options = {});

template <typename Scalar>
GradcheckReport gradcheck(const std::function<Var(Tape<Scalar>&, Var)>& f, const Tensor<Scalar>& point,
                          const GradcheckOptions& options = {}) {
    return gradcheck<Scalar>(
        [&f](Tape<Scalar>& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor<Scalar>>{point},
        options);
}

}  // namespace rmsd
