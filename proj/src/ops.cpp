#include "rmsd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rmsd {

std::string Shape::str() const {
    return "(" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, int begin, int end) {
    const Shape& s = t.shape();
    if (begin < 0 || end > s.c || begin >= end)
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + s.str());
    Tensor<Scalar> out(Shape{s.b, end - begin, s.h, s.w});
    const std::size_t chunk = static_cast<std::size_t>(end - begin) * s.plane();
    for (int b = 0; b < s.b; ++b) std::copy_n(t.plane(b, begin), chunk, out.plane(b, 0));
    return out;
}

SamePadding same_padding(int in, int kernel, int stride) {
    if (stride < 1) throw ContractError("stride must be positive");
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
}

namespace ops {
namespace {

void check_kernel(const Shape& x, const Shape& k, const Shape& bias) {
    if (k.h != k.w || k.h % 2 == 0)
        throw ShapeError("conv2d: kernel must be square with odd size, got " + k.str());
    if (x.c != k.c)
        throw ShapeError("conv2d: input " + x.str() + " has " + std::to_string(x.c) +
                         " channels but kernel " + k.str() + " expects " + std::to_string(k.c));
    if (bias.size() != static_cast<std::size_t>(k.b))
        throw ShapeError("conv2d: bias " + bias.str() + " does not match kernel " + k.str());
}

// Output columns [lo, hi) whose input column ox * stride - pad + kx is in range.
inline std::pair<int, int> valid_columns(SamePadding px, int w, int kx, int stride) {
    const int off = kx - px.pad;
    const int lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const int hi = std::clamp((w - 1 - off) / stride + 1, lo, px.out);
    return {std::min(lo, px.out), off > w - 1 ? std::min(lo, px.out) : hi};
}

// Column buffer for one batch element: rows (c, ky, kx), columns (oy, ox).
template <typename Scalar>
void im2col(const Scalar* x, int channels, int h, int w, int k, int stride, SamePadding py,
            SamePadding px, Scalar* cols) {
    const int out_plane = py.out * px.out;
    for (int c = 0; c < channels; ++c) {
        const Scalar* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                Scalar* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < py.out; ++oy) {
                    const int iy = oy * stride - py.pad + ky;
                    Scalar* dst = row + oy * px.out;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, px.out, Scalar(0));
                        continue;
                    }
                    const Scalar* src = xc + static_cast<std::size_t>(iy) * w;
                    const auto [lo, hi] = valid_columns(px, w, kx, stride);
                    std::fill(dst, dst + lo, Scalar(0));
                    if (stride == 1) {
                        std::copy(src + lo - px.pad + kx, src + hi - px.pad + kx, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride - px.pad + kx];
                    }
                    std::fill(dst + hi, dst + px.out, Scalar(0));
                }
            }
        }
    }
}

template <typename Scalar>
void col2im(const Scalar* cols, int channels, int h, int w, int k, int stride, SamePadding py,
            SamePadding px, Scalar* x) {
    const int out_plane = py.out * px.out;
    for (int c = 0; c < channels; ++c) {
        Scalar* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Scalar* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < py.out; ++oy) {
                    const int iy = oy * stride - py.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const Scalar* src = row + oy * px.out;
                    Scalar* dst = xc + static_cast<std::size_t>(iy) * w;
                    const auto [lo, hi] = valid_columns(px, w, kx, stride);
                    for (int ox = lo; ox < hi; ++ox) dst[ox * stride - px.pad + kx] += src[ox];
                }
            }
        }
    }
}

template <typename Scalar>
Scalar clamp_open_unit(double v) {
    constexpr Scalar lo = std::numeric_limits<Scalar>::min();
    const Scalar hi = std::nextafter(Scalar(1), Scalar(0));
    return std::clamp(static_cast<Scalar>(v), lo, hi);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      int stride) {
    const Shape& xs = x.shape();
    const Shape& ks = kernel.shape();
    check_kernel(xs, ks, bias.shape());
    if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");

    const int k = ks.h;
    const SamePadding py = same_padding(xs.h, k, stride);
    const SamePadding px = same_padding(xs.w, k, stride);
    const int out_plane = py.out * px.out;
    const int patch = xs.c * k * k;

    Tensor<Scalar> out(Shape{xs.b, ks.b, py.out, px.out});
    ConstMatrixMap<Scalar> weights(kernel.raw(), ks.b, patch);
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bvec(bias.raw(), ks.b);
    const bool direct = (k == 1 && stride == 1);
    RowMatrix<Scalar> cols;
    if (!direct) cols.resize(patch, out_plane);

    for (int b = 0; b < xs.b; ++b) {
        MatrixMap<Scalar> y(out.plane(b, 0), ks.b, out_plane);
        if (direct) {
            y.noalias() = weights * ConstMatrixMap<Scalar>(x.plane(b, 0), xs.c, out_plane);
        } else {
            im2col(x.plane(b, 0), xs.c, xs.h, xs.w, k, stride, py, px, cols.data());
            y.noalias() = weights * cols;
        }
        y.colwise() += bvec;
    }
    return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, int stride,
                                  const Tensor<Scalar>& grad_out) {
    const Shape& xs = x.shape();
    const Shape& ks = kernel.shape();
    const int k = ks.h;
    const SamePadding py = same_padding(xs.h, k, stride);
    const SamePadding px = same_padding(xs.w, k, stride);
    const int out_plane = py.out * px.out;
    const int patch = xs.c * k * k;
    if (grad_out.shape() != Shape{xs.b, ks.b, py.out, px.out})
        throw ShapeError("conv2d_backward: gradient shape " + grad_out.shape().str() + " unexpected");

    ConvGrads<Scalar> g{Tensor<Scalar>(xs), Tensor<Scalar>(ks), Tensor<Scalar>(Shape{1, ks.b, 1, 1})};
    ConstMatrixMap<Scalar> weights(kernel.raw(), ks.b, patch);
    MatrixMap<Scalar> dw(g.kernel.raw(), ks.b, patch);
    const bool direct = (k == 1 && stride == 1);
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> dcols;
    if (!direct) cols.resize(patch, out_plane);

    std::vector<double> db(ks.b, 0.0);
    for (int b = 0; b < xs.b; ++b) {
        ConstMatrixMap<Scalar> dy(grad_out.plane(b, 0), ks.b, out_plane);
        MatrixMap<Scalar> dx(g.input.plane(b, 0), xs.c, xs.h * xs.w);
        if (direct) {
            ConstMatrixMap<Scalar> xb(x.plane(b, 0), xs.c, out_plane);
            dw.noalias() += dy * xb.transpose();
            dx.noalias() = weights.transpose() * dy;
        } else {
            im2col(x.plane(b, 0), xs.c, xs.h, xs.w, k, stride, py, px, cols.data());
            dw.noalias() += dy * cols.transpose();
            dcols.noalias() = weights.transpose() * dy;
            col2im(dcols.data(), xs.c, xs.h, xs.w, k, stride, py, px, g.input.plane(b, 0));
        }
        for (int o = 0; o < ks.b; ++o) {
            const Scalar* row = grad_out.plane(b, o);
            double s = 0.0;
            for (int i = 0; i < out_plane; ++i) s += row[i];
            db[o] += s;
        }
    }
    for (int o = 0; o < ks.b; ++o) g.bias[o] = static_cast<Scalar>(db[o]);
    return g;
}

namespace {

void check_bn(const Shape& x, const Shape& p, const char* what) {
    if (p.size() != static_cast<std::size_t>(x.c))
        throw ShapeError(std::string("batch_norm2d: ") + what + " " + p.str() + " does not match input " +
                         x.str());
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> batch_norm_train(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                const Tensor<Scalar>& beta, double epsilon, BatchStats<Scalar>* stats) {
    const Shape& s = x.shape();
    check_bn(s, gamma.shape(), "gamma");
    check_bn(s, beta.shape(), "beta");
    const std::size_t plane = s.plane();
    const std::size_t n = static_cast<std::size_t>(s.b) * plane;

    BatchStats<Scalar> local;
    BatchStats<Scalar>& st = stats ? *stats : local;
    st.mean.assign(s.c, 0.0);
    st.var.assign(s.c, 0.0);
    st.inv_std.assign(s.c, 0.0);
    st.count = n;

    Tensor<Scalar> out(s);
    for (int c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + epsilon);
        st.mean[c] = mean;
        st.var[c] = var;
        st.inv_std[c] = inv_std;

        const double scale = gamma[c] * inv_std;
        const double shift = beta[c] - mean * scale;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            Scalar* q = out.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) q[i] = static_cast<Scalar>(p[i] * scale + shift);
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> batch_norm_infer(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                const Tensor<Scalar>& beta, const Tensor<Scalar>& running_mean,
                                const Tensor<Scalar>& running_var, double epsilon) {
    const Shape& s = x.shape();
    check_bn(s, gamma.shape(), "gamma");
    check_bn(s, beta.shape(), "beta");
    check_bn(s, running_mean.shape(), "running_mean");
    check_bn(s, running_var.shape(), "running_var");
    Tensor<Scalar> out(s);
    const std::size_t plane = s.plane();
    for (int c = 0; c < s.c; ++c) {
        const double scale = gamma[c] / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
        const double shift = beta[c] - running_mean[c] * scale;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            Scalar* q = out.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) q[i] = static_cast<Scalar>(p[i] * scale + shift);
        }
    }
    return out;
}

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_train_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                                 const BatchStats<Scalar>& stats,
                                                 const Tensor<Scalar>& grad_out) {
    const Shape& s = x.shape();
    const Shape cs{1, s.c, 1, 1};
    BatchNormGrads<Scalar> g{Tensor<Scalar>(s), Tensor<Scalar>(cs), Tensor<Scalar>(cs)};
    const std::size_t plane = s.plane();
    const double n = static_cast<double>(stats.count);
    for (int c = 0; c < s.c; ++c) {
        const double mean = stats.mean[c];
        const double inv_std = stats.inv_std[c];
        double dbeta = 0.0;
        double dgamma = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            const Scalar* dy = grad_out.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                dbeta += dy[i];
                dgamma += dy[i] * (p[i] - mean) * inv_std;
            }
        }
        g.gamma[c] = static_cast<Scalar>(dgamma);
        g.beta[c] = static_cast<Scalar>(dbeta);
        const double k = gamma[c] * inv_std / n;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            const Scalar* dy = grad_out.plane(b, c);
            Scalar* dx = g.input.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (p[i] - mean) * inv_std;
                dx[i] = static_cast<Scalar>(k * (n * dy[i] - dbeta - xhat * dgamma));
            }
        }
    }
    return g;
}

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_infer_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                                 const Tensor<Scalar>& running_mean,
                                                 const Tensor<Scalar>& running_var, double epsilon,
                                                 const Tensor<Scalar>& grad_out) {
    const Shape& s = x.shape();
    const Shape cs{1, s.c, 1, 1};
    BatchNormGrads<Scalar> g{Tensor<Scalar>(s), Tensor<Scalar>(cs), Tensor<Scalar>(cs)};
    const std::size_t plane = s.plane();
    for (int c = 0; c < s.c; ++c) {
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
        const double scale = gamma[c] * inv_std;
        double dbeta = 0.0;
        double dgamma = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const Scalar* p = x.plane(b, c);
            const Scalar* dy = grad_out.plane(b, c);
            Scalar* dx = g.input.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                dbeta += dy[i];
                dgamma += dy[i] * (p[i] - running_mean[c]) * inv_std;
                dx[i] = static_cast<Scalar>(dy[i] * scale);
            }
        }
        g.gamma[c] = static_cast<Scalar>(dgamma);
        g.beta[c] = static_cast<Scalar>(dbeta);
    }
    return g;
}

template <typename Scalar>
void update_running_stats(const BatchStats<Scalar>& stats, double momentum, Tensor<Scalar>& running_mean,
                          Tensor<Scalar>& running_var) {
    const double n = static_cast<double>(stats.count);
    const double unbias = stats.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        running_mean[c] = static_cast<Scalar>((1.0 - momentum) * running_mean[c] + momentum * stats.mean[c]);
        running_var[c] =
            static_cast<Scalar>((1.0 - momentum) * running_var[c] + momentum * stats.var[c] * unbias);
    }
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
    const Shape& s = x.shape();
    Tensor<Scalar> out(Shape{s.b, s.c, 1, 1});
    const std::size_t plane = s.plane();
    for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
            const Scalar* p = x.plane(b, c);
            double sum = 0.0;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            out(b, c, 0, 0) = static_cast<Scalar>(sum / static_cast<double>(plane));
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& grad_out) {
    Tensor<Scalar> g(input_shape);
    const std::size_t plane = input_shape.plane();
    for (int b = 0; b < input_shape.b; ++b) {
        for (int c = 0; c < input_shape.c; ++c) {
            const Scalar v = static_cast<Scalar>(grad_out(b, c, 0, 0) / static_cast<double>(plane));
            std::fill_n(g.plane(b, c), plane, v);
        }
    }
    return g;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x) {
    const Shape& s = x.shape();
    const int oh = (s.h + 1) / 2;
    const int ow = (s.w + 1) / 2;
    Tensor<Scalar> out(Shape{s.b, s.c, oh, ow});
    for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
            const Scalar* p = x.plane(b, c);
            Scalar* q = out.plane(b, c);
            for (int oy = 0; oy < oh; ++oy) {
                const int y1 = std::min(2 * oy + 2, s.h);
                for (int ox = 0; ox < ow; ++ox) {
                    const int x1 = std::min(2 * ox + 2, s.w);
                    double sum = 0.0;
                    int n = 0;
                    for (int y = 2 * oy; y < y1; ++y)
                        for (int xx = 2 * ox; xx < x1; ++xx, ++n) sum += p[y * s.w + xx];
                    q[oy * ow + ox] = static_cast<Scalar>(sum / n);
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2_backward(const Shape& s, const Tensor<Scalar>& grad_out) {
    Tensor<Scalar> g(s);
    const int oh = grad_out.height();
    const int ow = grad_out.width();
    for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
            const Scalar* dy = grad_out.plane(b, c);
            Scalar* dx = g.plane(b, c);
            for (int oy = 0; oy < oh; ++oy) {
                const int y1 = std::min(2 * oy + 2, s.h);
                for (int ox = 0; ox < ow; ++ox) {
                    const int x1 = std::min(2 * ox + 2, s.w);
                    const int n = (y1 - 2 * oy) * (x1 - 2 * ox);
                    const Scalar v = dy[oy * ow + ox] / static_cast<Scalar>(n);
                    for (int y = 2 * oy; y < y1; ++y)
                        for (int xx = 2 * ox; xx < x1; ++xx) dx[y * s.w + xx] += v;
                }
            }
        }
    }
    return g;
}

namespace {

struct Tap {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel-centre source taps for each output coordinate along one axis.
std::vector<Tap> linear_taps(int in, int out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(src);
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (out_h < s.h || out_w < s.w)
        throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " is smaller than input " + s.str());
    const auto ty = linear_taps(s.h, out_h);
    const auto tx = linear_taps(s.w, out_w);
    Tensor<Scalar> out(Shape{s.b, s.c, out_h, out_w});
    for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
            const Scalar* p = x.plane(b, c);
            Scalar* q = out.plane(b, c);
            for (int oy = 0; oy < out_h; ++oy) {
                const Tap& a = ty[oy];
                const Scalar* r0 = p + a.i0 * s.w;
                const Scalar* r1 = p + a.i1 * s.w;
                for (int ox = 0; ox < out_w; ++ox) {
                    const Tap& t = tx[ox];
                    const double top = r0[t.i0] * (1.0 - t.w1) + r0[t.i1] * t.w1;
                    const double bot = r1[t.i0] * (1.0 - t.w1) + r1[t.i1] * t.w1;
                    q[oy * out_w + ox] = static_cast<Scalar>(top * (1.0 - a.w1) + bot * a.w1);
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample_backward(const Shape& s, const Tensor<Scalar>& grad_out) {
    const int out_h = grad_out.height();
    const int out_w = grad_out.width();
    const auto ty = linear_taps(s.h, out_h);
    const auto tx = linear_taps(s.w, out_w);
    Tensor<Scalar> g(s);
    for (int b = 0; b < s.b; ++b) {
        for (int c = 0; c < s.c; ++c) {
            const Scalar* dy = grad_out.plane(b, c);
            Scalar* dx = g.plane(b, c);
            for (int oy = 0; oy < out_h; ++oy) {
                const Tap& a = ty[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const Tap& t = tx[ox];
                    const double v = dy[oy * out_w + ox];
                    dx[a.i0 * s.w + t.i0] += static_cast<Scalar>(v * (1.0 - a.w1) * (1.0 - t.w1));
                    dx[a.i0 * s.w + t.i1] += static_cast<Scalar>(v * (1.0 - a.w1) * t.w1);
                    dx[a.i1 * s.w + t.i0] += static_cast<Scalar>(v * a.w1 * (1.0 - t.w1));
                    dx[a.i1 * s.w + t.i1] += static_cast<Scalar>(v * a.w1 * t.w1);
                }
            }
        }
    }
    return g;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>* const> parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    const Shape first = parts[0]->shape();
    int channels = 0;
    for (const auto* p : parts) {
        const Shape& s = p->shape();
        if (s.b != first.b || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
        channels += s.c;
    }
    Tensor<Scalar> out(Shape{first.b, channels, first.h, first.w});
    for (int b = 0; b < first.b; ++b) {
        int offset = 0;
        for (const auto* p : parts) {
            const std::size_t n = static_cast<std::size_t>(p->channels()) * first.plane();
            std::copy_n(p->plane(b, 0), n, out.plane(b, offset));
            offset += p->channels();
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
    Tensor<Scalar> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = clamp_open_unit<Scalar>(s);
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
    Tensor<Scalar> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > Scalar(0) ? x[i] : Scalar(0);
    return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    auto dim = [&](int x, int y) {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw ShapeError("cannot broadcast " + a.str() + " against " + b.str());
    };
    return {dim(a.b, b.b), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

namespace {

template <typename Scalar, typename Op>
Tensor<Scalar> broadcast_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Op op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        Tensor<Scalar> out(sa);
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
        return out;
    }
    const Shape s = broadcast_shape(sa, sb);
    Tensor<Scalar> out(s);
    auto strides = [](const Shape& t) {
        const std::size_t sw = t.w == 1 ? 0 : 1;
        const std::size_t sh = t.h == 1 ? 0 : static_cast<std::size_t>(t.w);
        const std::size_t sc = t.c == 1 ? 0 : t.plane();
        const std::size_t sb = t.b == 1 ? 0 : static_cast<std::size_t>(t.c) * t.plane();
        return std::array<std::size_t, 4>{sb, sc, sh, sw};
    };
    const auto ta = strides(sa);
    const auto tb = strides(sb);
    std::size_t o = 0;
    for (int n = 0; n < s.b; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y) {
                const std::size_t ia = n * ta[0] + c * ta[1] + y * ta[2];
                const std::size_t ib = n * tb[0] + c * tb[1] + y * tb[2];
                for (int x = 0; x < s.w; ++x, ++o) out[o] = op(a[ia + x * ta[3]], b[ib + x * tb[3]]);
            }
    return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return broadcast_binary(a, b, [](Scalar u, Scalar v) { return u + v; });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return broadcast_binary(a, b, [](Scalar u, Scalar v) { return u * v; });
}

template <typename Scalar>
Tensor<Scalar> reduce_to(const Tensor<Scalar>& grad, const Shape& target) {
    const Shape& s = grad.shape();
    if (s == target) return grad;
    broadcast_shape(s, target);
    std::vector<double> acc(target.size(), 0.0);
    std::size_t o = 0;
    for (int n = 0; n < s.b; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x, ++o) {
                    const int tn = target.b == 1 ? 0 : n;
                    const int tc = target.c == 1 ? 0 : c;
                    const int ty = target.h == 1 ? 0 : y;
                    const int tx = target.w == 1 ? 0 : x;
                    acc[((static_cast<std::size_t>(tn) * target.c + tc) * target.h + ty) * target.w + tx] +=
                        grad[o];
                }
    Tensor<Scalar> out(target);
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<Scalar>(acc[i]);
    return out;
}

namespace {

void check_dense(const Shape& x, const Shape& w, const Shape& bias) {
    if (x.h != 1 || x.w != 1) throw ShapeError("dense: input must be (B,N,1,1), got " + x.str());
    if (w.h != 1 || w.w != 1 || w.c != x.c)
        throw ShapeError("dense: weight " + w.str() + " does not accept input " + x.str());
    if (bias.size() != static_cast<std::size_t>(w.b))
        throw ShapeError("dense: bias " + bias.str() + " does not match weight " + w.str());
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
    check_dense(x.shape(), weight.shape(), bias.shape());
    const int m = weight.batch();
    const int n = weight.channels();
    Tensor<Scalar> out(Shape{x.batch(), m, 1, 1});
    ConstMatrixMap<Scalar> xm(x.raw(), x.batch(), n);
    ConstMatrixMap<Scalar> wm(weight.raw(), m, n);
    MatrixMap<Scalar> ym(out.raw(), x.batch(), m);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.raw(), m);
    return out;
}

template <typename Scalar>
ConvGrads<Scalar> dense_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                 const Tensor<Scalar>& grad_out) {
    const int m = weight.batch();
    const int n = weight.channels();
    ConvGrads<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(weight.shape()),
                        Tensor<Scalar>(Shape{1, m, 1, 1})};
    ConstMatrixMap<Scalar> xm(x.raw(), x.batch(), n);
    ConstMatrixMap<Scalar> wm(weight.raw(), m, n);
    ConstMatrixMap<Scalar> dy(grad_out.raw(), x.batch(), m);
    MatrixMap<Scalar>(g.input.raw(), x.batch(), n).noalias() = dy * wm;
    MatrixMap<Scalar>(g.kernel.raw(), m, n).noalias() = dy.transpose() * xm;
    for (int j = 0; j < m; ++j) {
        double s = 0.0;
        for (int b = 0; b < x.batch(); ++b) s += dy(b, j);
        g.bias[j] = static_cast<Scalar>(s);
    }
    return g;
}

}  // namespace ops

template <typename Scalar>
Tensor<Scalar> batch_norm2d(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p) {
    if (p.mode == Mode::Infer)
        return ops::batch_norm_infer(x, p.gamma, p.beta, p.running_mean, p.running_var, p.epsilon);
    ops::check_bn(x.shape(), p.running_mean.shape(), "running_mean");
    ops::check_bn(x.shape(), p.running_var.shape(), "running_var");
    ops::BatchStats<Scalar> stats;
    auto out = ops::batch_norm_train(x, p.gamma, p.beta, p.epsilon, &stats);
    ops::update_running_stats(stats, p.momentum, p.running_mean, p.running_var);
    return out;
}

#define RMSD_INSTANTIATE_OPS(S)                                                                          \
    template double max_abs_diff(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> slice_channels(const Tensor<S>&, int, int);                                      \
    template Tensor<S> ops::conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int);          \
    template ops::ConvGrads<S> ops::conv2d_backward(const Tensor<S>&, const Tensor<S>&, int,            \
                                                    const Tensor<S>&);                                  \
    template Tensor<S> ops::batch_norm_train(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                             double, ops::BatchStats<S>*);                              \
    template Tensor<S> ops::batch_norm_infer(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                             const Tensor<S>&, const Tensor<S>&, double);               \
    template ops::BatchNormGrads<S> ops::batch_norm_train_backward(                                     \
        const Tensor<S>&, const Tensor<S>&, const ops::BatchStats<S>&, const Tensor<S>&);               \
    template ops::BatchNormGrads<S> ops::batch_norm_infer_backward(                                     \
        const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double,                 \
        const Tensor<S>&);                                                                              \
    template void ops::update_running_stats(const ops::BatchStats<S>&, double, Tensor<S>&, Tensor<S>&); \
    template Tensor<S> ops::global_avg_pool(const Tensor<S>&);                                          \
    template Tensor<S> ops::global_avg_pool_backward(const Shape&, const Tensor<S>&);                   \
    template Tensor<S> ops::avg_pool2(const Tensor<S>&);                                                \
    template Tensor<S> ops::avg_pool2_backward(const Shape&, const Tensor<S>&);                         \
    template Tensor<S> ops::bilinear_upsample(const Tensor<S>&, int, int);                              \
    template Tensor<S> ops::bilinear_upsample_backward(const Shape&, const Tensor<S>&);                 \
    template Tensor<S> ops::concat_channels(std::span<const Tensor<S>* const>);                        \
    template Tensor<S> ops::sigmoid(const Tensor<S>&);                                                  \
    template Tensor<S> ops::relu(const Tensor<S>&);                                                     \
    template Tensor<S> ops::add(const Tensor<S>&, const Tensor<S>&);                                    \
    template Tensor<S> ops::mul(const Tensor<S>&, const Tensor<S>&);                                    \
    template Tensor<S> ops::reduce_to(const Tensor<S>&, const Shape&);                                  \
    template Tensor<S> ops::dense(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                \
    template ops::ConvGrads<S> ops::dense_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
    template Tensor<S> batch_norm2d(const Tensor<S>&, BatchNormParams<S>&);

RMSD_INSTANTIATE_OPS(float)
RMSD_INSTANTIATE_OPS(double)

}  // namespace rmsd
