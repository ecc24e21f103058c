#pragma once

// Binds ModelParams onto a tape and provides the parameterised layers the
// blocks are assembled from.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rmsd/autodiff.hpp"
#include "rmsd/params.hpp"
#include "rmsd/rng.hpp"

namespace rmsd {

struct BatchNormSettings {
    double epsilon = 1e-5;
    double momentum = 0.1;
};

/// One forward pass over a model: lazily turns named parameters into tape
/// leaves and routes running statistics to the owning ModelParams.
template <typename Scalar>
class Graph {
public:
    Graph(Tape<Scalar>& tape, ModelParams<Scalar>& params, Mode mode, BatchNormSettings bn = {})
        : tape_(tape), params_(params), mode_(mode), bn_(bn) {}

    Tape<Scalar>& tape() { return tape_; }
    ModelParams<Scalar>& params() { return params_; }
    Mode mode() const { return mode_; }
    const BatchNormSettings& bn() const { return bn_; }

    /// Parameters are leaves that require grad only in training mode unless
    /// track_grads() overrides it.
    void track_grads(bool on) { track_ = on; }

    /// Uses `v` for parameter `name` instead of a fresh leaf.
    void bind(const std::string& name, Var v) { bound_[name] = v; }

    Var param(const std::string& name) {
        if (auto it = bound_.find(name); it != bound_.end()) return it->second;
        const bool grads = track_ ? *track_ : mode_ == Mode::Train;
        Var v = tape_.leaf(params_.at(name).value, grads);
        bound_.emplace(name, v);
        return v;
    }

    Tensor<Scalar>& state(const std::string& name) { return params_.at(name).value; }

    /// Runs backward from `loss` and stores gradients of every trainable
    /// parameter into ModelParams; parameters not reached get zeros.
    void backward(Var loss) {
        tape_.backward(loss);
        for (auto& e : params_.entries()) {
            if (!e.trainable()) continue;
            auto it = bound_.find(e.name);
            e.grad = it == bound_.end() ? Tensor<Scalar>::zeros(e.value.shape()) : tape_.grad(it->second);
        }
    }

    /// Optional record of (label, shape) pairs emitted by blocks.
    void enable_trace() { tracing_ = true; }
    void trace(std::string label, Var v) {
        if (tracing_) trace_.emplace_back(std::move(label), tape_.shape(v));
    }
    const std::vector<std::pair<std::string, Shape>>& trace_log() const { return trace_; }

private:
    Tape<Scalar>& tape_;
    ModelParams<Scalar>& params_;
    Mode mode_;
    BatchNormSettings bn_;
    std::optional<bool> track_;
    std::map<std::string, Var> bound_;
    bool tracing_ = false;
    std::vector<std::pair<std::string, Shape>> trace_;
};

/// Same-padded convolution "<name>.weight" (out, in, k, k) and "<name>.bias".
struct ConvSpec {
    std::string name;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 1;
    int stride = 1;

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(kernel) * kernel * in_ch * out_ch + out_ch;
    }
};

/// "<name>.gamma", ".beta", ".running_mean", ".running_var", each (1, N, 1, 1).
struct BatchNormSpec {
    std::string name;
    int channels = 0;

    std::size_t parameter_count() const { return 2 * static_cast<std::size_t>(channels); }
};

/// Affine layer "<name>.weight" (out, in, 1, 1) and "<name>.bias".
struct DenseSpec {
    std::string name;
    int in = 0;
    int out = 0;

    std::size_t parameter_count() const { return static_cast<std::size_t>(in) * out + out; }
};

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const ConvSpec& spec, Rng& rng);
template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const BatchNormSpec& spec, Rng& rng);
template <typename Scalar>
void init_params(ModelParams<Scalar>& params, const DenseSpec& spec, Rng& rng);

template <typename Scalar>
Var apply(Graph<Scalar>& g, const ConvSpec& spec, Var x);
template <typename Scalar>
Var apply(Graph<Scalar>& g, const BatchNormSpec& spec, Var x);
template <typename Scalar>
Var apply(Graph<Scalar>& g, const DenseSpec& spec, Var x);

}  // namespace rmsd
