#include "rmsd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rmsd/rng.hpp"

namespace rmsd {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

std::string GradcheckReport::summary() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: %zu/%zu within tolerance (max rel %.3g, mean rel %.3g)",
                  passed ? "pass" : "FAIL", checked - failed, checked, max_rel_error, mean_rel_error);
    return buf;
}

namespace {

template <typename Scalar>
double evaluate(const TapedFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& points, bool track) {
    Tape<Scalar> tape;
    std::vector<Var> vars;
    vars.reserve(points.size());
    for (const auto& p : points) vars.push_back(tape.leaf(p, track));
    return static_cast<double>(tape.value(f(tape, vars)).item());
}

}  // namespace

template <typename Scalar>
GradcheckReport gradcheck(const TapedFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& points,
                          const GradcheckOptions& options) {
    if (!(options.step > 0.0)) throw ContractError("gradcheck: step must be positive");

    std::vector<Tensor<Scalar>> analytic;
    {
        Tape<Scalar> tape;
        std::vector<Var> vars;
        for (const auto& p : points) vars.push_back(tape.leaf(p, true));
        const Var y = f(tape, vars);
        tape.backward(y);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < points[i].size(); ++j) coords.emplace_back(i, j);
    if (options.max_coordinates > 0 && coords.size() > options.max_coordinates) {
        Rng rng(options.seed);
        for (std::size_t k = 0; k < options.max_coordinates; ++k) {
            const auto pick = k + static_cast<std::size_t>(rng.below(coords.size() - k));
            std::swap(coords[k], coords[pick]);
        }
        coords.resize(options.max_coordinates);
    }

    GradcheckReport report;
    std::vector<Tensor<Scalar>> probe = points;
    double total = 0.0;
    for (const auto& [i, j] : coords) {
        const Scalar original = probe[i][j];
        probe[i][j] = static_cast<Scalar>(original + options.step);
        const double up = evaluate(f, probe, false);
        probe[i][j] = static_cast<Scalar>(original - options.step);
        const double down = evaluate(f, probe, false);
        probe[i][j] = original;

        const double numeric = (up - down) / (2.0 * options.step);
        const double err = relative_error(static_cast<double>(analytic[i][j]), numeric, options.denominator_floor);
        report.checked += 1;
        if (!(err <= options.tolerance)) {
            report.failed += 1;
            if (report.failures.size() < 16)
                report.failures.push_back({i, j, static_cast<double>(analytic[i][j]), numeric});
        }
        report.max_rel_error = std::max(report.max_rel_error, err);
        total += err;
    }
    report.mean_rel_error = report.checked ? total / static_cast<double>(report.checked) : 0.0;
    report.passed = report.pass_fraction() >= options.min_pass_fraction;
    return report;
}

template GradcheckReport gradcheck(const TapedFunction<float>&, const std::vector<Tensor<float>>&,
                                   const GradcheckOptions&);
template GradcheckReport gradcheck(const TapedFunction<double>&, const std::vector<Tensor<double>>&,
                                   const GradcheckOptions&);

}  // namespace rmsd
