#include <cmath>

#include "sanet/kernels.hpp"

namespace sanet::kernels {

template <typename T>
void instance_norm_forward(const Tensor<T>& in, std::span<const T> gamma, std::span<const T> beta, T eps,
                           Tensor<T>& out, std::span<T> mean, std::span<T> inv_std)
{
    const Shape s = in.shape();
    if (out.shape() != s || std::ssize(gamma) != s.c || std::ssize(beta) != s.c || std::ssize(mean) != s.c ||
        std::ssize(inv_std) != s.c)
        throw ShapeError("instance norm buffers do not match input " + s.str());
    const std::int64_t n = s.spatial();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < s.c; ++c) {
        const T* x = in.data() + c * n;
        double sum = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            sum += x[i];
        const double mu = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            sq += (x[i] - mu) * (x[i] - mu);
        const double istd = 1.0 / std::sqrt(sq / static_cast<double>(n) + static_cast<double>(eps));
        mean[c] = static_cast<T>(mu);
        inv_std[c] = static_cast<T>(istd);
        const T scale = static_cast<T>(gamma[c] * istd);
        const T shift = static_cast<T>(beta[c] - gamma[c] * istd * mu);
        T* y = out.data() + c * n;
#pragma omp simd
        for (std::int64_t i = 0; i < n; ++i)
            y[i] = scale * x[i] + shift;
    }
}

template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& in, std::span<const T> gamma,
                            std::span<const T> mean, std::span<const T> inv_std, Tensor<T>& grad_in,
                            std::span<T> grad_gamma, std::span<T> grad_beta)
{
    const Shape s = in.shape();
    if (grad_out.shape() != s || grad_in.shape() != s)
        throw ShapeError("instance norm gradient does not match input " + s.str());
    const std::int64_t n = s.spatial();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < s.c; ++c) {
        const T* x = in.data() + c * n;
        const T* dy = grad_out.data() + c * n;
        const double mu = mean[c], istd = inv_std[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (x[i] - mu) * istd;
        }
        grad_gamma[c] += static_cast<T>(sum_dy_xhat);
        grad_beta[c] += static_cast<T>(sum_dy);
        const double k = gamma[c] * istd;
        const double mean_dy = sum_dy / static_cast<double>(n);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(n);
        T* dx = grad_in.data() + c * n;
        for (std::int64_t i = 0; i < n; ++i)
            dx[i] += static_cast<T>(k * (dy[i] - mean_dy - (x[i] - mu) * istd * mean_dy_xhat));
    }
}

#define SANET_INSTANTIATE_NORM(T)                                                                              \
    template void instance_norm_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, T,        \
                                           Tensor<T>&, std::span<T>, std::span<T>);                            \
    template void instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,            \
                                            std::span<const T>, std::span<const T>, Tensor<T>&, std::span<T>,  \
                                            std::span<T>);

SANET_INSTANTIATE_NORM(float)
SANET_INSTANTIATE_NORM(double)

}  // namespace sanet::kernels
