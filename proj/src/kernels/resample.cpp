#include <algorithm>
#include <cmath>
#include <vector>

#include "sanet/kernels.hpp"

namespace sanet::kernels {
namespace {

void check_factor(const Shape& in, const Shape& out, int factor, bool down)
{
    if (factor < 1)
        throw ConfigError("resampling factor must be positive");
    const Shape expect = down ? Shape{in.c, in.d / factor, in.h / factor, in.w / factor}
                              : Shape{in.c, in.d * factor, in.h * factor, in.w * factor};
    if (down && (in.d % factor || in.h % factor || in.w % factor))
        throw ShapeError("max pooling by " + std::to_string(factor) + " needs extents divisible by it, got " +
                         in.str());
    if (out != expect)
        throw ShapeError("resampling output " + out.str() + " does not match " + expect.str());
}

// Linear interpolation taps for one axis of a half-pixel-centred upsample.
struct Taps {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> l0, l1;
};

Taps make_taps(std::int64_t in, int factor)
{
    const std::int64_t out = in * factor;
    Taps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.l0.resize(out);
    t.l1.resize(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
        src = std::max(src, 0.0);
        const auto lo = std::min(static_cast<std::int64_t>(src), in - 1);
        t.i0[o] = lo;
        t.i1[o] = std::min(lo + 1, in - 1);
        t.l1[o] = src - static_cast<double>(lo);
        t.l0[o] = 1.0 - t.l1[o];
    }
    return t;
}

}  // namespace

template <typename T>
void maxpool3d_forward(const Tensor<T>& in, int factor, Tensor<T>& out, std::vector<std::int64_t>& argmax)
{
    const Shape is = in.shape();
    const Shape os = out.shape();
    check_factor(is, os, factor, true);
    argmax.assign(static_cast<std::size_t>(os.numel()), 0);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy)
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    std::size_t best = in.index(c, oz * factor, oy * factor, ox * factor);
                    T best_v = in[best];
                    for (int dz = 0; dz < factor; ++dz)
                        for (int dy = 0; dy < factor; ++dy) {
                            const std::size_t row = in.index(c, oz * factor + dz, oy * factor + dy, ox * factor);
                            for (int dx = 0; dx < factor; ++dx)
                                if (in[row + dx] > best_v) {
                                    best_v = in[row + dx];
                                    best = row + dx;
                                }
                        }
                    const std::size_t o = out.index(c, oz, oy, ox);
                    out[o] = best_v;
                    argmax[o] = static_cast<std::int64_t>(best);
                }
}

template <typename T>
void maxpool3d_backward(const Tensor<T>& grad_out, std::span<const std::int64_t> argmax, Tensor<T>& grad_in)
{
    if (argmax.size() != grad_out.size())
        throw ShapeError("max pooling argmax does not match gradient");
    const Shape os = grad_out.shape();
    // windows do not overlap and never cross channels, so per-channel scatter is race free
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t i = c * os.spatial(); i < (c + 1) * os.spatial(); ++i)
            grad_in[static_cast<std::size_t>(argmax[i])] += grad_out[static_cast<std::size_t>(i)];
}

template <typename T>
void upsample_trilinear_forward(const Tensor<T>& in, int factor, Tensor<T>& out)
{
    const Shape is = in.shape();
    const Shape os = out.shape();
    check_factor(is, os, factor, false);
    const Taps tz = make_taps(is.d, factor), ty = make_taps(is.h, factor), tx = make_taps(is.w, factor);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
                const T* r00 = &in(c, tz.i0[oz], ty.i0[oy], 0);
                const T* r01 = &in(c, tz.i0[oz], ty.i1[oy], 0);
                const T* r10 = &in(c, tz.i1[oz], ty.i0[oy], 0);
                const T* r11 = &in(c, tz.i1[oz], ty.i1[oy], 0);
                const double w00 = tz.l0[oz] * ty.l0[oy], w01 = tz.l0[oz] * ty.l1[oy];
                const double w10 = tz.l1[oz] * ty.l0[oy], w11 = tz.l1[oz] * ty.l1[oy];
                T* orow = &out(c, oz, oy, 0);
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    const auto a = tx.i0[ox], b = tx.i1[ox];
                    const double v0 = w00 * r00[a] + w01 * r01[a] + w10 * r10[a] + w11 * r11[a];
                    const double v1 = w00 * r00[b] + w01 * r01[b] + w10 * r10[b] + w11 * r11[b];
                    orow[ox] = static_cast<T>(tx.l0[ox] * v0 + tx.l1[ox] * v1);
                }
            }
}

template <typename T>
void upsample_trilinear_backward(const Tensor<T>& grad_out, int factor, Tensor<T>& grad_in)
{
    const Shape is = grad_in.shape();
    const Shape os = grad_out.shape();
    check_factor(is, os, factor, false);
    const Taps tz = make_taps(is.d, factor), ty = make_taps(is.h, factor), tx = make_taps(is.w, factor);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
                T* r00 = &grad_in(c, tz.i0[oz], ty.i0[oy], 0);
                T* r01 = &grad_in(c, tz.i0[oz], ty.i1[oy], 0);
                T* r10 = &grad_in(c, tz.i1[oz], ty.i0[oy], 0);
                T* r11 = &grad_in(c, tz.i1[oz], ty.i1[oy], 0);
                const double w00 = tz.l0[oz] * ty.l0[oy], w01 = tz.l0[oz] * ty.l1[oy];
                const double w10 = tz.l1[oz] * ty.l0[oy], w11 = tz.l1[oz] * ty.l1[oy];
                const T* grow = &grad_out(c, oz, oy, 0);
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    const double g = grow[ox];
                    const auto a = tx.i0[ox], b = tx.i1[ox];
                    const double ga = g * tx.l0[ox], gb = g * tx.l1[ox];
                    r00[a] += static_cast<T>(w00 * ga);
                    r01[a] += static_cast<T>(w01 * ga);
                    r10[a] += static_cast<T>(w10 * ga);
                    r11[a] += static_cast<T>(w11 * ga);
                    r00[b] += static_cast<T>(w00 * gb);
                    r01[b] += static_cast<T>(w01 * gb);
                    r10[b] += static_cast<T>(w10 * gb);
                    r11[b] += static_cast<T>(w11 * gb);
                }
            }
}

#define SANET_INSTANTIATE_RESAMPLE(T)                                                                          \
    template void maxpool3d_forward<T>(const Tensor<T>&, int, Tensor<T>&, std::vector<std::int64_t>&);       \
    template void maxpool3d_backward<T>(const Tensor<T>&, std::span<const std::int64_t>, Tensor<T>&);        \
    template void upsample_trilinear_forward<T>(const Tensor<T>&, int, Tensor<T>&);                           \
    template void upsample_trilinear_backward<T>(const Tensor<T>&, int, Tensor<T>&);

SANET_INSTANTIATE_RESAMPLE(float)
SANET_INSTANTIATE_RESAMPLE(double)

}  // namespace sanet::kernels
