#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "sanet/kernels.hpp"

// Convolution as im2col + GEMM. The unfolded column matrix is built one slab
// of output z-planes at a time so its size stays bounded for large volumes.

namespace sanet::kernels {
namespace {

constexpr std::int64_t kMaxColumnElements = std::int64_t{1} << 23;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

void check_conv(const Shape& in, const Shape& weight, const Shape& out, ConvGeometry g)
{
    if (g.kernel < 1 || g.stride < 1 || g.pad < 0)
        throw ConfigError("invalid convolution geometry");
    if (weight != conv_weight_shape(out.c, in.c, g.kernel))
        throw ShapeError("conv weight " + weight.str() + " does not match " + in.str() + " -> " + out.str());
    if (out != g.out_shape(in, out.c))
        throw ShapeError("conv output " + out.str() + " does not match input " + in.str());
}

struct Slab {
    std::int64_t z0;
    std::int64_t z1;
    [[nodiscard]] std::int64_t planes() const { return z1 - z0; }
};

std::vector<Slab> slabs(const Shape& out, std::int64_t rows)
{
    const std::int64_t plane = out.h * out.w;
    const std::int64_t per = std::max<std::int64_t>(1, kMaxColumnElements / std::max<std::int64_t>(1, rows * plane));
    std::vector<Slab> s;
    for (std::int64_t z = 0; z < out.d; z += per)
        s.push_back({z, std::min(out.d, z + per)});
    return s;
}

// [lo, hi) of output positions whose tap lands inside [0, in_extent).
std::pair<std::int64_t, std::int64_t> tap_range(std::int64_t in_extent, std::int64_t out_extent, int tap,
                                                ConvGeometry g)
{
    const std::int64_t first = g.pad - tap;
    const std::int64_t lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
    const std::int64_t last = in_extent - 1 - tap + g.pad;
    const std::int64_t hi = last < 0 ? 0 : std::min(out_extent, last / g.stride + 1);
    return {std::min(lo, out_extent), std::max(lo, hi)};
}

template <typename T>
void im2col(const Tensor<T>& in, const Shape& os, ConvGeometry g, Slab slab, T* cols)
{
    const Shape is = in.shape();
    const int k = g.kernel;
    const std::int64_t k3 = static_cast<std::int64_t>(k) * k * k;
    const std::int64_t width = slab.planes() * os.h * os.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < is.c * k3; ++r) {
        const std::int64_t ci = r / k3;
        const int kz = static_cast<int>(r % k3 / (k * k)), ky = static_cast<int>(r % (k * k) / k),
                  kx = static_cast<int>(r % k);
        T* dst = cols + r * width;
        const auto [xlo, xhi] = tap_range(is.w, os.w, kx, g);
        for (std::int64_t oz = slab.z0; oz < slab.z1; ++oz) {
            const std::int64_t iz = oz * g.stride + kz - g.pad;
            for (std::int64_t oy = 0; oy < os.h; ++oy, dst += os.w) {
                const std::int64_t iy = oy * g.stride + ky - g.pad;
                if (iz < 0 || iz >= is.d || iy < 0 || iy >= is.h) {
                    std::fill(dst, dst + os.w, T{0});
                    continue;
                }
                const T* src = in.data() + ((ci * is.d + iz) * is.h + iy) * is.w + kx - g.pad;
                std::fill(dst, dst + xlo, T{0});
                if (g.stride == 1)
                    std::copy(src + xlo, src + xhi, dst + xlo);
                else
                    for (std::int64_t ox = xlo; ox < xhi; ++ox)
                        dst[ox] = src[ox * g.stride];
                std::fill(dst + xhi, dst + os.w, T{0});
            }
        }
    }
}

// grad_in += fold(cols); threads own whole input channels so writes never race.
template <typename T>
void col2im_add(const T* cols, const Shape& os, ConvGeometry g, Slab slab, Tensor<T>& grad_in)
{
    const Shape is = grad_in.shape();
    const int k = g.kernel;
    const std::int64_t k3 = static_cast<std::int64_t>(k) * k * k;
    const std::int64_t width = slab.planes() * os.h * os.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t ci = 0; ci < is.c; ++ci)
        for (std::int64_t t = 0; t < k3; ++t) {
            const int kz = static_cast<int>(t / (k * k)), ky = static_cast<int>(t % (k * k) / k),
                      kx = static_cast<int>(t % k);
            const T* src = cols + (ci * k3 + t) * width;
            const auto [xlo, xhi] = tap_range(is.w, os.w, kx, g);
            for (std::int64_t oz = slab.z0; oz < slab.z1; ++oz) {
                const std::int64_t iz = oz * g.stride + kz - g.pad;
                for (std::int64_t oy = 0; oy < os.h; ++oy, src += os.w) {
                    const std::int64_t iy = oy * g.stride + ky - g.pad;
                    if (iz < 0 || iz >= is.d || iy < 0 || iy >= is.h)
                        continue;
                    T* dst = grad_in.data() + ((ci * is.d + iz) * is.h + iy) * is.w + kx - g.pad;
                    if (g.stride == 1) {
#pragma omp simd
                        for (std::int64_t ox = xlo; ox < xhi; ++ox)
                            dst[ox] += src[ox];
                    } else {
                        for (std::int64_t ox = xlo; ox < xhi; ++ox)
                            dst[ox * g.stride] += src[ox];
                    }
                }
            }
        }
}

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, ConvGeometry g,
                    Tensor<T>& out)
{
    const Shape is = in.shape();
    const Shape os = out.shape();
    check_conv(is, weight.shape(), os, g);
    if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != os.c)
        throw ShapeError("conv bias length mismatch");
    const std::int64_t rows = is.c * g.kernel * g.kernel * g.kernel;
    const std::int64_t plane = os.h * os.w;
    const ConstMatMap<T> w(weight.data(), os.c, rows, Eigen::OuterStride<>(rows));
    std::vector<T> cols;
    for (const Slab slab : slabs(os, rows)) {
        const std::int64_t width = slab.planes() * plane;
        cols.resize(static_cast<std::size_t>(rows * width));
        im2col(in, os, g, slab, cols.data());
        MatMap<T> o(out.data() + slab.z0 * plane, os.c, width, Eigen::OuterStride<>(os.spatial()));
        o.noalias() = w * ConstMatMap<T>(cols.data(), rows, width, Eigen::OuterStride<>(width));
    }
    if (!bias.empty()) {
#pragma omp parallel for schedule(static)
        for (std::int64_t co = 0; co < os.c; ++co)
            for (T& v : out.channel(co))
                v += bias[static_cast<std::size_t>(co)];
    }
}

template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, ConvGeometry g, Tensor<T>& grad_in)
{
    const Shape is = grad_in.shape();
    const Shape os = grad_out.shape();
    check_conv(is, weight.shape(), os, g);
    const std::int64_t rows = is.c * g.kernel * g.kernel * g.kernel;
    const std::int64_t plane = os.h * os.w;
    const ConstMatMap<T> w(weight.data(), os.c, rows, Eigen::OuterStride<>(rows));
    std::vector<T> cols;
    for (const Slab slab : slabs(os, rows)) {
        const std::int64_t width = slab.planes() * plane;
        cols.resize(static_cast<std::size_t>(rows * width));
        MatMap<T> c(cols.data(), rows, width, Eigen::OuterStride<>(width));
        c.noalias() =
            w.transpose() * ConstMatMap<T>(grad_out.data() + slab.z0 * plane, os.c, width, Eigen::OuterStride<>(os.spatial()));
        col2im_add(cols.data(), os, g, slab, grad_in);
    }
}

template <typename T>
void conv3d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& in, ConvGeometry g, Tensor<T>& grad_w)
{
    const Shape is = in.shape();
    const Shape os = grad_out.shape();
    check_conv(is, grad_w.shape(), os, g);
    const std::int64_t rows = is.c * g.kernel * g.kernel * g.kernel;
    const std::int64_t plane = os.h * os.w;
    MatMap<T> gw(grad_w.data(), os.c, rows, Eigen::OuterStride<>(rows));
    std::vector<T> cols;
    for (const Slab slab : slabs(os, rows)) {
        const std::int64_t width = slab.planes() * plane;
        cols.resize(static_cast<std::size_t>(rows * width));
        im2col(in, os, g, slab, cols.data());
        gw.noalias() +=
            ConstMatMap<T>(grad_out.data() + slab.z0 * plane, os.c, width, Eigen::OuterStride<>(os.spatial())) *
            ConstMatMap<T>(cols.data(), rows, width, Eigen::OuterStride<>(width)).transpose();
    }
}

#define SANET_INSTANTIATE_CONV(T)                                                                              \
    template void conv3d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, ConvGeometry,      \
                                    Tensor<T>&);                                                               \
    template void conv3d_backward_input<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>&);      \
    template void conv3d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>&);

SANET_INSTANTIATE_CONV(float)
SANET_INSTANTIATE_CONV(double)

}  // namespace sanet::kernels
