#pragma once

// Naive reference implementations used only by tests. Each one evaluates the
// defining formula with plain loops and double accumulation.

#include <algorithm>
#include <cmath>
#include <vector>

#include "rmsd/rng.hpp"
#include "rmsd/tensor.hpp"

namespace rmsd::oracle {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<Scalar> t(s);
    for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias, int stride) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    const int k = ws.h;
    const int oh = (xs.h + stride - 1) / stride;
    const int ow = (xs.w + stride - 1) / stride;
    const int pad_y = std::max((oh - 1) * stride + k - xs.h, 0) / 2;
    const int pad_x = std::max((ow - 1) * stride + k - xs.w, 0) / 2;
    Tensor<Scalar> out(Shape{xs.b, ws.b, oh, ow});
    for (int b = 0; b < xs.b; ++b)
        for (int o = 0; o < ws.b; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    double acc = bias[o];
                    for (int c = 0; c < xs.c; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * stride + ky - pad_y;
                                const int ix = xo * stride + kx - pad_x;
                                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                                acc += static_cast<double>(x(b, c, iy, ix)) * w(o, c, ky, kx);
                            }
                    out(b, o, y, xo) = static_cast<Scalar>(acc);
                }
    return out;
}

/// Training-mode batch norm with explicit mean/variance loops.
template <typename Scalar>
Tensor<Scalar> batch_norm_train(const Tensor<Scalar>& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, double eps) {
    const Shape s = x.shape();
    Tensor<Scalar> out(s);
    for (int c = 0; c < s.c; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx, ++n) sum += x(b, c, y, xx);
        const double mean = sum / n;
        double var = 0.0;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) var += (x(b, c, y, xx) - mean) * (x(b, c, y, xx) - mean);
        var /= n;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx)
                    out(b, c, y, xx) =
                        static_cast<Scalar>(gamma[c] * (x(b, c, y, xx) - mean) / std::sqrt(var + eps) + beta[c]);
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
    const Shape s = x.shape();
    Tensor<Scalar> out(Shape{s.b, s.c, 1, 1});
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            double sum = 0.0;
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) sum += x(b, c, y, xx);
            out(b, c, 0, 0) = static_cast<Scalar>(sum / (s.h * s.w));
        }
    return out;
}

/// Half-pixel-centre bilinear sample of one output pixel.
template <typename Scalar>
double bilinear_pixel(const Tensor<Scalar>& x, int b, int c, int oy, int ox, int out_h, int out_w) {
    const Shape s = x.shape();
    auto axis = [](int o, int in, int out, int& i0, int& i1, double& f) {
        double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        i0 = static_cast<int>(std::floor(src));
        i1 = std::min(i0 + 1, in - 1);
        f = src - i0;
    };
    int y0, y1, x0, x1;
    double fy, fx;
    axis(oy, s.h, out_h, y0, y1, fy);
    axis(ox, s.w, out_w, x0, x1, fx);
    return (1 - fy) * ((1 - fx) * x(b, c, y0, x0) + fx * x(b, c, y0, x1)) +
           fy * ((1 - fx) * x(b, c, y1, x0) + fx * x(b, c, y1, x1));
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, int out_h, int out_w) {
    const Shape s = x.shape();
    Tensor<Scalar> out(Shape{s.b, s.c, out_h, out_w});
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx)
                    out(b, c, y, xx) = static_cast<Scalar>(bilinear_pixel(x, b, c, y, xx, out_h, out_w));
    return out;
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias) {
    const int batch = x.batch();
    const int m = w.batch();
    const int n = w.channels();
    Tensor<Scalar> out(Shape{batch, m, 1, 1});
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < m; ++i) {
            double acc = bias[i];
            for (int j = 0; j < n; ++j) acc += static_cast<double>(w(i, j, 0, 0)) * x(b, j, 0, 0);
            out(b, i, 0, 0) = static_cast<Scalar>(acc);
        }
    return out;
}

/// Catmull-Rom weight (a = -0.5) at distance t.
inline double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

/// Bicubic resample of one output pixel with edge clamping.
template <typename Scalar>
double bicubic_pixel(const Tensor<Scalar>& x, int b, int c, int oy, int ox, int out_h, int out_w) {
    const Shape s = x.shape();
    const double sy = (oy + 0.5) * static_cast<double>(s.h) / out_h - 0.5;
    const double sx = (ox + 0.5) * static_cast<double>(s.w) / out_w - 0.5;
    const int fy = static_cast<int>(std::floor(sy));
    const int fx = static_cast<int>(std::floor(sx));
    double acc = 0.0;
    for (int j = fy - 1; j <= fy + 2; ++j)
        for (int i = fx - 1; i <= fx + 2; ++i) {
            const int cy = std::clamp(j, 0, s.h - 1);
            const int cx = std::clamp(i, 0, s.w - 1);
            acc += cubic_weight(sy - j) * cubic_weight(sx - i) * x(b, c, cy, cx);
        }
    return acc;
}

}  // namespace rmsd::oracle
