#include "rmsd/layers.hpp"

#include <cmath>

namespace rmsd {

std::string_view to_string(ParamKind k) {
    switch (k) {
        case ParamKind::Weight: return "weight";
        case ParamKind::Bias: return "bias";
        case ParamKind::Gamma: return "gamma";
        case ParamKind::Beta: return "beta";
        case ParamKind::RunningMean: return "running_mean";
        case ParamKind::RunningVar: return "running_var";
    }
    return "weight";
}

ParamKind param_kind_from_string(std::string_view s) {
    for (ParamKind k : {ParamKind::Weight, ParamKind::Bias, ParamKind::Gamma, ParamKind::Beta,
                        ParamKind::RunningMean, ParamKind::RunningVar})
        if (to_string(k) == s) return k;
    throw ContractError("unknown parameter kind: " + std::string(s));
}

namespace {

template <typename Scalar>
Tensor<Scalar> he_uniform(Shape shape, int fan_in, Rng& rng) {
    Tensor<Scalar> t(shape);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const ConvSpec& spec, Rng& rng) {
    if (spec.kernel % 2 == 0 || spec.kernel < 1 || spec.kernel > 9)
        throw ContractError("conv " + spec.name + ": kernel must be one of 1, 3, 5, 7, 9");
    params.add(spec.name + ".weight", ParamKind::Weight,
               he_uniform<Scalar>(Shape{spec.out_ch, spec.in_ch, spec.kernel, spec.kernel},
                                  spec.in_ch * spec.kernel * spec.kernel, rng));
    params.add(spec.name + ".bias", ParamKind::Bias, Tensor<Scalar>::zeros(Shape{1, spec.out_ch, 1, 1}));
}

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const BatchNormSpec& spec, Rng&) {
    const Shape s{1, spec.channels, 1, 1};
    params.add(spec.name + ".gamma", ParamKind::Gamma, Tensor<Scalar>::ones(s));
    params.add(spec.name + ".beta", ParamKind::Beta, Tensor<Scalar>::zeros(s));
    params.add(spec.name + ".running_mean", ParamKind::RunningMean, Tensor<Scalar>::zeros(s));
    params.add(spec.name + ".running_var", ParamKind::RunningVar, Tensor<Scalar>::ones(s));
}

template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const DenseSpec& spec, Rng& rng) {
    params.add(spec.name + ".weight", ParamKind::Weight,
               he_uniform<Scalar>(Shape{spec.out, spec.in, 1, 1}, spec.in, rng));
    params.add(spec.name + ".bias", ParamKind::Bias, Tensor<Scalar>::zeros(Shape{1, spec.out, 1, 1}));
}

template <typename Scalar>
Var apply(Graph<Scalar>& g, const ConvSpec& spec, Var x) {
    return conv2d(g.tape(), x, g.param(spec.name + ".weight"), g.param(spec.name + ".bias"), spec.stride);
}

template <typename Scalar>
Var apply(Graph<Scalar>& g, const BatchNormSpec& spec, Var x) {
    return batch_norm2d(g.tape(), x, g.param(spec.name + ".gamma"), g.param(spec.name + ".beta"),
                        g.state(spec.name + ".running_mean"), g.state(spec.name + ".running_var"),
                        g.bn().epsilon, g.bn().momentum, g.mode());
}

template <typename Scalar>
Var apply(Graph<Scalar>& g, const DenseSpec& spec, Var x) {
    return dense(g.tape(), x, g.param(spec.name + ".weight"), g.param(spec.name + ".bias"));
}

#define RMSD_INSTANTIATE_LAYERS(S)                                                  \
    template void init_params(ModelParams<S>&, const ConvSpec&, Rng&);            \
    template void init_params(ModelParams<S>&, const BatchNormSpec&, Rng&);       \
    template void init_params(ModelParams<S>&, const DenseSpec&, Rng&);           \
    template Var apply(Graph<S>&, const ConvSpec&, Var);                          \
    template Var apply(Graph<S>&, const BatchNormSpec&, Var);                     \
    template Var apply(Graph<S>&, const DenseSpec&, Var);

RMSD_INSTANTIATE_LAYERS(float)
RMSD_INSTANTIATE_LAYERS(double)

}  // namespace rmsd
