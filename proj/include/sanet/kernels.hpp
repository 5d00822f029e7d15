#pragma once

#include <cstdint>
#include <span>

#include "sanet/tensor.hpp"

// Volumetric compute kernels. The functions in sanet::kernels are OpenMP
// parallel over channels (or lines) and write each output element from exactly
// one thread in a fixed order, so results do not depend on the thread count.
// sanet::kernels::reference holds straightforward serial loops used as the
// oracle in tests and as the baseline in the benchmark.

namespace sanet::kernels {

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    [[nodiscard]] std::int64_t out_extent(std::int64_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
    [[nodiscard]] Shape out_shape(const Shape& in, std::int64_t out_channels) const
    {
        return {out_channels, out_extent(in.d), out_extent(in.h), out_extent(in.w)};
    }
};

/// Weight layout (out, in, k, k, k) stored as Shape{out, in, k, k*k}.
inline Shape conv_weight_shape(std::int64_t out_ch, std::int64_t in_ch, int k) { return {out_ch, in_ch, k, k * k}; }

// out = conv(in, w) + bias. `out` must already have the output shape; it is overwritten.
template <typename T>
void conv3d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, ConvGeometry g,
                    Tensor<T>& out);
// grad_in += conv^T(grad_out, w)
template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, ConvGeometry g, Tensor<T>& grad_in);
// grad_w += correlation of grad_out with in
template <typename T>
void conv3d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& in, ConvGeometry g, Tensor<T>& grad_w);

// Non-overlapping max pooling (kernel == stride). argmax holds the flat input
// index of each selected element, used by the backward pass.
template <typename T>
void maxpool3d_forward(const Tensor<T>& in, int factor, Tensor<T>& out, std::vector<std::int64_t>& argmax);
template <typename T>
void maxpool3d_backward(const Tensor<T>& grad_out, std::span<const std::int64_t> argmax, Tensor<T>& grad_in);

// Trilinear upsampling by an integer factor with half-pixel centres (align_corners = false).
template <typename T>
void upsample_trilinear_forward(const Tensor<T>& in, int factor, Tensor<T>& out);
template <typename T>
void upsample_trilinear_backward(const Tensor<T>& grad_out, int factor, Tensor<T>& grad_in);

// Per-channel normalisation over the spatial extent with affine scale/shift.
// mean and inv_std (length C) are written for reuse in the backward pass.
template <typename T>
void instance_norm_forward(const Tensor<T>& in, std::span<const T> gamma, std::span<const T> beta, T eps,
                           Tensor<T>& out, std::span<T> mean, std::span<T> inv_std);
template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& in, std::span<const T> gamma,
                            std::span<const T> mean, std::span<const T> inv_std, Tensor<T>& grad_in,
                            std::span<T> grad_gamma, std::span<T> grad_beta);

namespace reference {

template <typename T>
void conv3d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, ConvGeometry g,
                    Tensor<T>& out);
template <typename T>
void conv3d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, ConvGeometry g, Tensor<T>& grad_in);
template <typename T>
void conv3d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& in, ConvGeometry g, Tensor<T>& grad_w);
template <typename T>
void maxpool3d_forward(const Tensor<T>& in, int factor, Tensor<T>& out, std::vector<std::int64_t>& argmax);
template <typename T>
void upsample_trilinear_forward(const Tensor<T>& in, int factor, Tensor<T>& out);
template <typename T>
void upsample_trilinear_backward(const Tensor<T>& grad_out, int factor, Tensor<T>& grad_in);
template <typename T>
void instance_norm_forward(const Tensor<T>& in, std::span<const T> gamma, std::span<const T> beta, T eps,
                           Tensor<T>& out, std::span<T> mean, std::span<T> inv_std);
template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& in, std::span<const T> gamma,
                            std::span<const T> mean, std::span<const T> inv_std, Tensor<T>& grad_in,
                            std::span<T> grad_gamma, std::span<T> grad_beta);

}  // namespace reference

}  // namespace sanet::kernels
