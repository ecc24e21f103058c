#include "rmsd/metrics.hpp"

namespace rmsd {

template <typename Scalar>
ConfusionCounts confusion(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double threshold) {
    if (pred.shape() != target.shape())
        throw ShapeError("confusion: prediction " + pred.shape().str() + " and target " + target.shape().str() +
                         " differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = static_cast<double>(pred[i]) >= threshold;
        const bool y = target[i] >= Scalar(0.5);
        if (p && y) ++c.tp;
        else if (!p && !y) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

MetricsReport metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw ContractError("metrics: no pixels counted");
    auto ratio = [](std::uint64_t num, std::uint64_t den, bool& degenerate) {
        if (den == 0) {
            degenerate = true;
            return 1.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    MetricsReport r;
    r.counts = c;
    r.ac = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    r.sp = ratio(c.tn, c.fp + c.tn, r.degenerate.sp);
    r.rec = ratio(c.tp, c.tp + c.fn, r.degenerate.rec);
    r.dc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, r.degenerate.dc);
    r.jsi = ratio(c.tp, c.tp + c.fp + c.fn, r.degenerate.jsi);
    return r;
}

MacroMetrics macro_average(const std::vector<MetricsReport>& reports) {
    MacroMetrics m;
    m.images = reports.size();
    if (reports.empty()) return m;
    for (const auto& r : reports) {
        m.ac += r.ac;
        m.sp += r.sp;
        m.rec += r.rec;
        m.dc += r.dc;
        m.jsi += r.jsi;
    }
    const double n = static_cast<double>(reports.size());
    m.ac /= n;
    m.sp /= n;
    m.rec /= n;
    m.dc /= n;
    m.jsi /= n;
    return m;
}

void to_json(nlohmann::json& j, const ConfusionCounts& c) {
    j = nlohmann::json{{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json{{"counts", r.counts}, {"ac", r.ac}, {"sp", r.sp}, {"rec", r.rec}, {"dc", r.dc}, {"jsi", r.jsi}};
    nlohmann::json flags = nlohmann::json::array();
    if (r.degenerate.sp) flags.push_back("sp");
    if (r.degenerate.rec) flags.push_back("rec");
    if (r.degenerate.dc) flags.push_back("dc");
    if (r.degenerate.jsi) flags.push_back("jsi");
    j["degenerate"] = flags;
}

void to_json(nlohmann::json& j, const MacroMetrics& m) {
    j = nlohmann::json{{"ac", m.ac}, {"sp", m.sp}, {"rec", m.rec}, {"dc", m.dc}, {"jsi", m.jsi}, {"images", m.images}};
}

template ConfusionCounts confusion(const Tensor<float>&, const Tensor<float>&, double);
template ConfusionCounts confusion(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace rmsd
