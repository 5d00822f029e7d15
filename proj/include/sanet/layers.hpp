#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sanet/ops.hpp"

namespace sanet::nn {

template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

/// Trainable tensor with gradient tracking.
template <typename T>
Var<T> make_parameter(Shape shape, T fill = T{0})
{
    return Var<T>(Tensor<T>(shape, fill), true);
}

template <typename T>
class Conv3d {
public:
    Conv3d(std::int64_t in_ch, std::int64_t out_ch, ConvGeometry g, bool with_bias, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const { return conv3d(x, weight_, bias_, geometry_); }
    [[nodiscard]] Shape out_shape(const Shape& in) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    Var<T>& weight() { return weight_; }
    Var<T>& bias() { return bias_; }

private:
    std::int64_t in_ch_, out_ch_;
    ConvGeometry geometry_;
    Var<T> weight_;
    Var<T> bias_;
};

/// Kernel == stride transposed convolution used for learned upsampling.
template <typename T>
class ConvTranspose3d {
public:
    ConvTranspose3d(std::int64_t in_ch, std::int64_t out_ch, int stride, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const { return conv_transpose3d(x, weight_, bias_, stride_); }
    [[nodiscard]] Shape out_shape(const Shape& in) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    std::int64_t in_ch_, out_ch_;
    int stride_;
    Var<T> weight_;
    Var<T> bias_;
};

template <typename T>
class InstanceNorm3d {
public:
    explicit InstanceNorm3d(std::int64_t channels, T eps = T(1e-5));

    Var<T> operator()(const Var<T>& x) const { return instance_norm(x, gamma_, beta_, eps_); }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    Var<T>& gamma() { return gamma_; }
    Var<T>& beta() { return beta_; }

private:
    Var<T> gamma_;
    Var<T> beta_;
    T eps_;
};

template <typename T>
class Linear {
public:
    Linear(std::int64_t in_features, std::int64_t out_features, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight_, bias_); }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    Var<T>& weight() { return weight_; }
    Var<T>& bias() { return bias_; }

private:
    Var<T> weight_;
    Var<T> bias_;
};

/// 3x3x3 convolution (no bias) -> instance norm -> ReLU.
template <typename T>
class ConvNormRelu {
public:
    ConvNormRelu(std::int64_t in_ch, std::int64_t out_ch, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const { return relu(norm_(conv_(x))); }
    [[nodiscard]] Shape out_shape(const Shape& in) const { return conv_.out_shape(in); }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    Conv3d<T> conv_;
    InstanceNorm3d<T> norm_;
};

/// Squeeze-and-excitation channel gating: global pool -> FC(C -> C/r) -> ReLU
/// -> FC(C/r -> C) -> sigmoid, then each channel scaled by its gate.
template <typename T>
class SqueezeExcitation {
public:
    SqueezeExcitation(std::int64_t channels, int reduction, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const { return scale_channels(x, gates(x)); }
    /// The per-channel gates in (0, 1), length C.
    Var<T> gates(const Var<T>& x) const;
    [[nodiscard]] std::int64_t bottleneck() const { return bottleneck_; }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    Linear<T>& squeeze() { return squeeze_; }
    Linear<T>& excite() { return excite_; }

private:
    std::int64_t bottleneck_;
    Linear<T> squeeze_;
    Linear<T> excite_;
};

/// Residual block: two Conv-Norm-ReLU layers, SE gating on the branch, additive
/// skip (1x1x1 strided projection when channels or stride change), ReLU after the add.
template <typename T>
class ResSEBlock {
public:
    ResSEBlock(std::int64_t in_ch, std::int64_t out_ch, int stride, int se_reduction, std::mt19937_64& rng);

    Var<T> operator()(const Var<T>& x) const;
    [[nodiscard]] Shape out_shape(const Shape& in) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    [[nodiscard]] bool has_projection() const { return projection_.has_value(); }
    /// Zeroes every parameter of the residual branch (both convs, norms and SE).
    void zero_branch();

private:
    int stride_;
    Conv3d<T> conv1_;
    InstanceNorm3d<T> norm1_;
    Conv3d<T> conv2_;
    InstanceNorm3d<T> norm2_;
    SqueezeExcitation<T> se_;
    std::optional<Conv3d<T>> projection_;
};

}  // namespace sanet::nn
