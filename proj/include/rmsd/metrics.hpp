#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rmsd/tensor.hpp"

namespace rmsd {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Which metrics hit a zero denominator and were set to 1 by convention.
struct DegenerateFlags {
    bool sp = false;   // no negatives in the ground truth or prediction
    bool rec = false;  // no positives in the ground truth
    bool dc = false;   // both masks empty
    bool jsi = false;

    bool any() const { return sp || rec || dc || jsi; }
};

struct MetricsReport {
    ConfusionCounts counts;
    double ac = 0.0;
    double sp = 0.0;
    double rec = 0.0;
    double dc = 0.0;
    double jsi = 0.0;
    DegenerateFlags degenerate;
};

/// Binarises pred at threshold (>= threshold is foreground) and counts
/// against a {0,1} target.
template <typename Scalar>
ConfusionCounts confusion(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double threshold = 0.5);

/// AC, SP, REC, DC and JSI from counts. Requires total() > 0.
MetricsReport metrics(const ConfusionCounts& counts);

/// Unweighted mean of per-image metrics.
struct MacroMetrics {
    double ac = 0.0;
    double sp = 0.0;
    double rec = 0.0;
    double dc = 0.0;
    double jsi = 0.0;
    std::size_t images = 0;
};
MacroMetrics macro_average(const std::vector<MetricsReport>& reports);

void to_json(nlohmann::json& j, const ConfusionCounts& c);
void to_json(nlohmann::json& j, const MetricsReport& r);
void to_json(nlohmann::json& j, const MacroMetrics& m);

}  // namespace rmsd
