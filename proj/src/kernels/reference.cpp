// Serial textbook implementations. Deliberately unoptimised: every output
// element is computed straight from its defining sum.

#include <cmath>
#include <vector>

#include "sanet/kernels.hpp"

namespace sanet::kernels::reference {
namespace {

template <typename T>
T w_at(const Tensor<T>& w, std::int64_t co, std::int64_t ci, int kz, int ky, int kx, int k)
{
    return w[static_cast<std::size_t>((((co * w.shape().d + ci) * k + kz) * k + ky) * k + kx)];
}

bool inside(const Shape& s, std::int64_t z, std::int64_t y, std::int64_t x)
{
    return z >= 0 && z < s.d && y >= 0 && y < s.h && x >= 0 && x < s.w;
}

double upsample_coord(std::int64_t o, int factor)
{
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    return src < 0.0 ? 0.0 : src;
}

// Weight of input index i in the interpolation of output coordinate o.
double linear_weight(std::int64_t o, std::int64_t i, std::int64_t in_extent, int factor)
{
    const double src = upsample_coord(o, factor);
    const auto lo = std::min(static_cast<std::int64_t>(std::floor(src)), in_extent - 1);
    const auto hi = std::min(lo + 1, in_extent - 1);
    const double frac = src - static_cast<double>(lo);
    double w = 0.0;
    if (i == lo)
        w += 1.0 - frac;
    if (i == hi)
        w += frac;
    return w;
}

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, ConvGeometry g,
                    Tensor<T>& out)
{
    const Shape is = in.shape(), os = out.shape();
    if (weight.shape() != conv_weight_shape(os.c, is.c, g.kernel) || os != g.out_shape(is, os.c))
        throw ShapeError("reference conv shape mismatch");
    for (std::int64_t co = 0; co < os.c; ++co)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy)
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
                    for (std::int64_t ci = 0; ci < is.c; ++ci)
                        for (int kz = 0; kz < g.kernel; ++kz)
                            for (int ky = 0; ky < g.kernel; ++ky)
                                for (int kx = 0; kx < g.kernel; ++kx) {
                                    const std::int64_t z = oz * g.stride + kz - g.pad;
                                    const std::int64_t y = oy * g.stride + ky - g.pad;
                                    const std::int64_t x = ox * g.stride + kx - g.pad;
                                    if (inside(is, z, y, x))
                                        acc += static_cast<double>(w_at(weight, co, ci, kz, ky, kx, g.kernel)) *
                                               in(ci, z, y, x);
                                }
                    out(co, oz, oy, ox) = static_cast<T>(acc);
                }
}

template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, ConvGeometry g, Tensor<T>& grad_in)
{
    const Shape is = grad_in.shape(), os = grad_out.shape();
    if (weight.shape() != conv_weight_shape(os.c, is.c, g.kernel) || os != g.out_shape(is, os.c))
        throw ShapeError("reference conv shape mismatch");
    for (std::int64_t co = 0; co < os.c; ++co)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy)
                for (std::int64_t ox = 0; ox < os.w; ++ox)
                    for (std::int64_t ci = 0; ci < is.c; ++ci)
                        for (int kz = 0; kz < g.kernel; ++kz)
                            for (int ky = 0; ky < g.kernel; ++ky)
                                for (int kx = 0; kx < g.kernel; ++kx) {
                                    const std::int64_t z = oz * g.stride + kz - g.pad;
                                    const std::int64_t y = oy * g.stride + ky - g.pad;
                                    const std::int64_t x = ox * g.stride + kx - g.pad;
                                    if (inside(is, z, y, x))
                                        grad_in(ci, z, y, x) +=
                                            w_at(weight, co, ci, kz, ky, kx, g.kernel) * grad_out(co, oz, oy, ox);
                                }
}

template <typename T>
void conv3d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& in, ConvGeometry g, Tensor<T>& grad_w)
{
    const Shape is = in.shape(), os = grad_out.shape();
    if (grad_w.shape() != conv_weight_shape(os.c, is.c, g.kernel) || os != g.out_shape(is, os.c))
        throw ShapeError("reference conv shape mismatch");
    const int k = g.kernel;
    for (std::int64_t co = 0; co < os.c; ++co)
        for (std::int64_t ci = 0; ci < is.c; ++ci)
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        double acc = 0.0;
                        for (std::int64_t oz = 0; oz < os.d; ++oz)
                            for (std::int64_t oy = 0; oy < os.h; ++oy)
                                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                                    const std::int64_t z = oz * g.stride + kz - g.pad;
                                    const std::int64_t y = oy * g.stride + ky - g.pad;
                                    const std::int64_t x = ox * g.stride + kx - g.pad;
                                    if (inside(is, z, y, x))
                                        acc += static_cast<double>(grad_out(co, oz, oy, ox)) * in(ci, z, y, x);
                                }
                        grad_w[static_cast<std::size_t>((((co * is.c + ci) * k + kz) * k + ky) * k + kx)] +=
                            static_cast<T>(acc);
                    }
}

template <typename T>
void maxpool3d_forward(const Tensor<T>& in, int factor, Tensor<T>& out, std::vector<std::int64_t>& argmax)
{
    const Shape os = out.shape();
    argmax.assign(static_cast<std::size_t>(os.numel()), -1);
    for (std::int64_t c = 0; c < os.c; ++c)
        for (std::int64_t oz = 0; oz < os.d; ++oz)
            for (std::int64_t oy = 0; oy < os.h; ++oy)
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    const std::size_t o = out.index(c, oz, oy, ox);
                    for (int dz = 0; dz < factor; ++dz)
                        for (int dy = 0; dy < factor; ++dy)
                            for (int dx = 0; dx < factor; ++dx) {
                                const std::size_t i =
                                    in.index(c, oz * factor + dz, oy * factor + dy, ox * factor + dx);
                                if (argmax[o] < 0 || in[i] > out[o]) {
                                    out[o] = in[i];
                                    argmax[o] = static_cast<std::int64_t>(i);
                                }
                            }
                }
}

// Separable form: three 1-D linear passes, one per axis.
template <typename T>
void upsample_trilinear_forward(const Tensor<T>& in, int factor, Tensor<T>& out)
{
    const Shape is = in.shape();
    std::vector<double> cur(in.values().begin(), in.values().end());
    Shape cs = is;
    for (int axis = 0; axis < 3; ++axis) {
        Shape ns = cs;
        (axis == 0 ? ns.d : axis == 1 ? ns.h : ns.w) *= factor;
        std::vector<double> next(static_cast<std::size_t>(ns.numel()), 0.0);
        const std::int64_t n_in = axis == 0 ? cs.d : axis == 1 ? cs.h : cs.w;
        for (std::int64_t c = 0; c < ns.c; ++c)
            for (std::int64_t z = 0; z < ns.d; ++z)
                for (std::int64_t y = 0; y < ns.h; ++y)
                    for (std::int64_t x = 0; x < ns.w; ++x) {
                        const std::int64_t o = axis == 0 ? z : axis == 1 ? y : x;
                        double v = 0.0;
                        for (std::int64_t i = 0; i < n_in; ++i) {
                            const double wgt = linear_weight(o, i, n_in, factor);
                            if (wgt == 0.0)
                                continue;
                            const std::int64_t sz = axis == 0 ? i : z, sy = axis == 1 ? i : y, sx = axis == 2 ? i : x;
                            v += wgt * cur[static_cast<std::size_t>(((c * cs.d + sz) * cs.h + sy) * cs.w + sx)];
                        }
                        next[static_cast<std::size_t>(((c * ns.d + z) * ns.h + y) * ns.w + x)] = v;
                    }
        cur = std::move(next);
        cs = ns;
    }
    for (std::size_t i = 0; i < cur.size(); ++i)
        out[i] = static_cast<T>(cur[i]);
}

// Adjoint computed element by element from the 8-tap weights.
template <typename T>
void upsample_trilinear_backward(const Tensor<T>& grad_out, int factor, Tensor<T>& grad_in)
{
    const Shape is = grad_in.shape(), os = grad_out.shape();
    for (std::int64_t c = 0; c < is.c; ++c)
        for (std::int64_t z = 0; z < is.d; ++z)
            for (std::int64_t y = 0; y < is.h; ++y)
                for (std::int64_t x = 0; x < is.w; ++x) {
                    double acc = 0.0;
                    for (std::int64_t oz = 0; oz < os.d; ++oz) {
                        const double wz = linear_weight(oz, z, is.d, factor);
                        if (wz == 0.0)
                            continue;
                        for (std::int64_t oy = 0; oy < os.h; ++oy) {
                            const double wy = linear_weight(oy, y, is.h, factor);
                            if (wy == 0.0)
                                continue;
                            for (std::int64_t ox = 0; ox < os.w; ++ox) {
                                const double wx = linear_weight(ox, x, is.w, factor);
                                if (wx != 0.0)
                                    acc += wz * wy * wx * grad_out(c, oz, oy, ox);
                            }
                        }
                    }
                    grad_in(c, z, y, x) += static_cast<T>(acc);
                }
}

template <typename T>
void instance_norm_forward(const Tensor<T>& in, std::span<const T> gamma, std::span<const T> beta, T eps,
                           Tensor<T>& out, std::span<T> mean, std::span<T> inv_std)
{
    const Shape s = in.shape();
    const auto n = static_cast<double>(s.spatial());
    for (std::int64_t c = 0; c < s.c; ++c) {
        double mu = 0.0;
        for (const T v : in.channel(c))
            mu += v;
        mu /= n;
        double var = 0.0;
        for (const T v : in.channel(c))
            var += (v - mu) * (v - mu);
        var /= n;
        const double sd = std::sqrt(var + eps);
        mean[c] = static_cast<T>(mu);
        inv_std[c] = static_cast<T>(1.0 / sd);
        auto o = out.channel(c);
        auto x = in.channel(c);
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] = static_cast<T>(gamma[c] * ((x[i] - mu) / sd) + beta[c]);
    }
}

template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& in, std::span<const T> gamma,
                            std::span<const T> mean, std::span<const T> inv_std, Tensor<T>& grad_in,
                            std::span<T> grad_gamma, std::span<T> grad_beta)
{
    const Shape s = in.shape();
    const auto n = static_cast<double>(s.spatial());
    for (std::int64_t c = 0; c < s.c; ++c) {
        auto x = in.channel(c);
        auto dy = grad_out.channel(c);
        auto dx = grad_in.channel(c);
        const double mu = mean[c], istd = inv_std[c];
        // dL/dxhat, then the Jacobian of xhat = (x - mean) * istd applied explicitly
        double sum_g = 0.0, sum_g_xhat = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double xhat = (x[i] - mu) * istd;
            grad_gamma[c] += static_cast<T>(dy[i] * xhat);
            grad_beta[c] += dy[i];
            sum_g += dy[i] * gamma[c];
            sum_g_xhat += dy[i] * gamma[c] * xhat;
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double xhat = (x[i] - mu) * istd;
            dx[i] += static_cast<T>(istd * (dy[i] * gamma[c] - sum_g / n - xhat * sum_g_xhat / n));
        }
    }
}

#define SANET_INSTANTIATE_REFERENCE(T)                                                                         \
    template void conv3d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, ConvGeometry,      \
                                    Tensor<T>&);                                                               \
    template void conv3d_backward_input<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>&);      \
    template void conv3d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>&);     \
    template void maxpool3d_forward<T>(const Tensor<T>&, int, Tensor<T>&, std::vector<std::int64_t>&);       \
    template void upsample_trilinear_forward<T>(const Tensor<T>&, int, Tensor<T>&);                           \
    template void upsample_trilinear_backward<T>(const Tensor<T>&, int, Tensor<T>&);                          \
    template void instance_norm_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, T,        \
                                           Tensor<T>&, std::span<T>, std::span<T>);                            \
    template void instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,            \
                                            std::span<const T>, std::span<const T>, Tensor<T>&, std::span<T>,  \
                                            std::span<T>);

SANET_INSTANTIATE_REFERENCE(float)
SANET_INSTANTIATE_REFERENCE(double)

}  // namespace sanet::kernels::reference
