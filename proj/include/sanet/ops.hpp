#pragma once

#include <vector>

#include "sanet/autograd.hpp"
#include "sanet/kernels.hpp"

// Differentiable tensor operations. All take and return single-sample tensors
// of Shape (C, D, H, W); vectors are (C, 1, 1, 1).

namespace sanet::nn {

using kernels::ConvGeometry;

/// `bias` may be an undefined Var.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g);

/// Transposed convolution with kernel == stride and no padding; weight layout (in, out, k, k, k).
template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride);

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs);

/// Arithmetic mean of same-shaped tensors.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs);

/// x[c, ...] * gate[c]
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& gate);

/// Spatial mean per channel -> (C, 1, 1, 1).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// Fully connected layer on a (Cin, 1, 1, 1) vector; weight (Cout, Cin, 1, 1).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> maxpool3d(const Var<T>& x, int factor);

template <typename T>
Var<T> upsample_trilinear(const Var<T>& x, int factor);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// N vectors of length C -> (N, C, 1, 1).
template <typename T>
Var<T> stack_vectors(const std::vector<Var<T>>& xs);

/// Softmax over the leading axis of an (N, C, 1, 1) tensor, independently per column.
template <typename T>
Var<T> softmax_leading(const Var<T>& x);

/// Row `index` of an (N, C, 1, 1) tensor as a (C, 1, 1, 1) vector.
template <typename T>
Var<T> select_row(const Var<T>& x, std::int64_t index);

}  // namespace sanet::nn
