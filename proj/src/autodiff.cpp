#include "rmsd/autodiff.hpp"

#include <vector>

namespace rmsd {

template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var x, Var kernel, Var bias, int stride) {
    auto out = ops::conv2d(tape.value(x), tape.value(kernel), tape.value(bias), stride);
    return tape.record(std::move(out), {x, kernel, bias},
                       [x, kernel, bias, stride](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto grads = ops::conv2d_backward(t.value(x), t.value(kernel), stride, g);
                           t.accumulate(x, std::move(grads.input));
                           t.accumulate(kernel, std::move(grads.kernel));
                           t.accumulate(bias, std::move(grads.bias));
                       });
}

template <typename Scalar>
Var batch_norm2d(Tape<Scalar>& tape, Var x, Var gamma, Var beta, Tensor<Scalar>& running_mean,
                 Tensor<Scalar>& running_var, double epsilon, double momentum, Mode mode) {
    if (mode == Mode::Infer) {
        auto out = ops::batch_norm_infer(tape.value(x), tape.value(gamma), tape.value(beta), running_mean,
                                         running_var, epsilon);
        // Statistics are frozen for the lifetime of this node.
        return tape.record(std::move(out), {x, gamma, beta},
                           [x, gamma, beta, rm = running_mean, rv = running_var, epsilon](
                               Tape<Scalar>& t, const Tensor<Scalar>& g) {
                               auto grads =
                                   ops::batch_norm_infer_backward(t.value(x), t.value(gamma), rm, rv, epsilon, g);
                               t.accumulate(x, std::move(grads.input));
                               t.accumulate(gamma, std::move(grads.gamma));
                               t.accumulate(beta, std::move(grads.beta));
                           });
    }
    if (running_mean.size() != static_cast<std::size_t>(tape.shape(x).c) ||
        running_var.size() != static_cast<std::size_t>(tape.shape(x).c))
        throw ShapeError("batch_norm2d: running statistics do not match input " + tape.shape(x).str());
    ops::BatchStats<Scalar> stats;
    auto out = ops::batch_norm_train(tape.value(x), tape.value(gamma), tape.value(beta), epsilon, &stats);
    ops::update_running_stats(stats, momentum, running_mean, running_var);
    return tape.record(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, stats = std::move(stats)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto grads = ops::batch_norm_train_backward(t.value(x), t.value(gamma), stats, g);
                           t.accumulate(x, std::move(grads.input));
                           t.accumulate(gamma, std::move(grads.gamma));
                           t.accumulate(beta, std::move(grads.beta));
                       });
}

template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& tape, Var x) {
    return tape.record(ops::global_avg_pool(tape.value(x)), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        t.accumulate(x, ops::global_avg_pool_backward(t.shape(x), g));
    });
}

template <typename Scalar>
Var avg_pool2(Tape<Scalar>& tape, Var x) {
    return tape.record(ops::avg_pool2(tape.value(x)), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        t.accumulate(x, ops::avg_pool2_backward(t.shape(x), g));
    });
}

template <typename Scalar>
Var bilinear_upsample(Tape<Scalar>& tape, Var x, int out_h, int out_w) {
    return tape.record(ops::bilinear_upsample(tape.value(x), out_h, out_w), {x},
                       [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate(x, ops::bilinear_upsample_backward(t.shape(x), g));
                       });
}

template <typename Scalar>
Var concat_channels(Tape<Scalar>& tape, std::span<const Var> parts) {
    std::vector<const Tensor<Scalar>*> values;
    values.reserve(parts.size());
    for (Var v : parts) values.push_back(&tape.value(v));
    auto out = ops::concat_channels<Scalar>(values);
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(std::move(out), parts, [inputs](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        int offset = 0;
        for (Var v : inputs) {
            const int c = t.shape(v).c;
            if (t.requires_grad(v)) t.accumulate(v, rmsd::slice_channels(g, offset, offset + c));
            offset += c;
        }
    });
}

template <typename Scalar>
Var slice_channels(Tape<Scalar>& tape, Var x, int begin, int end) {
    return tape.record(rmsd::slice_channels(tape.value(x), begin, end), {x},
                       [x, begin, end](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           Tensor<Scalar> full(t.shape(x));
                           const Shape& s = full.shape();
                           const std::size_t chunk = static_cast<std::size_t>(end - begin) * s.plane();
                           for (int b = 0; b < s.b; ++b) std::copy_n(g.plane(b, 0), chunk, full.plane(b, begin));
                           t.accumulate(x, std::move(full));
                       });
}

template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x) {
    // The backward pass reads the node's own output.
    const Var self{static_cast<int>(tape.size())};
    return tape.record(ops::sigmoid(tape.value(x)), {x}, [x, self](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Tensor<Scalar>& y = t.value(self);
        Tensor<Scalar> dx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] = g[i] * y[i] * (Scalar(1) - y[i]);
        t.accumulate(x, std::move(dx));
    });
}

template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x) {
    return tape.record(ops::relu(tape.value(x)), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Tensor<Scalar>& in = t.value(x);
        Tensor<Scalar> dx(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) dx[i] = in[i] > Scalar(0) ? g[i] : Scalar(0);
        t.accumulate(x, std::move(dx));
    });
}

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b) {
    return tape.record(ops::add(tape.value(a), tape.value(b)), {a, b},
                       [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (t.requires_grad(a)) t.accumulate(a, ops::reduce_to(g, t.shape(a)));
                           if (t.requires_grad(b)) t.accumulate(b, ops::reduce_to(g, t.shape(b)));
                       });
}

template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b) {
    return tape.record(ops::mul(tape.value(a), tape.value(b)), {a, b},
                       [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (t.requires_grad(a)) t.accumulate(a, ops::reduce_to(ops::mul(g, t.value(b)), t.shape(a)));
                           if (t.requires_grad(b)) t.accumulate(b, ops::reduce_to(ops::mul(g, t.value(a)), t.shape(b)));
                       });
}

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, double factor) {
    Tensor<Scalar> out = tape.value(x);
    out.vec() *= static_cast<Scalar>(factor);
    return tape.record(std::move(out), {x}, [x, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Tensor<Scalar> dx = g;
        dx.vec() *= static_cast<Scalar>(factor);
        t.accumulate(x, std::move(dx));
    });
}

template <typename Scalar>
Var dense(Tape<Scalar>& tape, Var x, Var weight, Var bias) {
    return tape.record(ops::dense(tape.value(x), tape.value(weight), tape.value(bias)), {x, weight, bias},
                       [x, weight, bias](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto grads = ops::dense_backward(t.value(x), t.value(weight), g);
                           t.accumulate(x, std::move(grads.input));
                           t.accumulate(weight, std::move(grads.kernel));
                           t.accumulate(bias, std::move(grads.bias));
                       });
}

template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x) {
    double s = 0.0;
    for (Scalar v : tape.value(x).data()) s += v;
    return tape.record(Tensor<Scalar>::scalar(static_cast<Scalar>(s)), {x},
                       [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate(x, Tensor<Scalar>::full(t.shape(x), g.item()));
                       });
}

#define RMSD_INSTANTIATE_AD(S)                                                                             \
    template Var conv2d(Tape<S>&, Var, Var, Var, int);                                                   \
    template Var batch_norm2d(Tape<S>&, Var, Var, Var, Tensor<S>&, Tensor<S>&, double, double, Mode);    \
    template Var global_avg_pool(Tape<S>&, Var);                                                         \
    template Var avg_pool2(Tape<S>&, Var);                                                               \
    template Var bilinear_upsample(Tape<S>&, Var, int, int);                                             \
    template Var concat_channels(Tape<S>&, std::span<const Var>);                                        \
    template Var slice_channels(Tape<S>&, Var, int, int);                                                \
    template Var sigmoid(Tape<S>&, Var);                                                                 \
    template Var relu(Tape<S>&, Var);                                                                    \
    template Var add(Tape<S>&, Var, Var);                                                                \
    template Var mul(Tape<S>&, Var, Var);                                                                \
    template Var scale(Tape<S>&, Var, double);                                                           \
    template Var dense(Tape<S>&, Var, Var, Var);                                                         \
    template Var sum(Tape<S>&, Var);

RMSD_INSTANTIATE_AD(float)
RMSD_INSTANTIATE_AD(double)

}  // namespace rmsd
