#include "sanet/layers.hpp"

#include <cmath>

namespace sanet::nn {
namespace {

// He (fan-in) normal initialisation.
template <typename T>
Var<T> he_normal(Shape shape, std::int64_t fan_in, std::mt19937_64& rng)
{
    Tensor<T> t(shape);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (T& v : t.values())
        v = static_cast<T>(dist(rng));
    return Var<T>(std::move(t), true);
}

template <typename T>
void zero(Var<T>& v)
{
    if (v.defined())
        v.value().fill(T{0});
}

}  // namespace

template <typename T>
Conv3d<T>::Conv3d(std::int64_t in_ch, std::int64_t out_ch, ConvGeometry g, bool with_bias, std::mt19937_64& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      geometry_(g),
      weight_(he_normal<T>(kernels::conv_weight_shape(out_ch, in_ch, g.kernel), in_ch * g.kernel * g.kernel * g.kernel,
                           rng))
{
    if (with_bias)
        bias_ = make_parameter<T>(vector_shape(out_ch));
}

template <typename T>
Shape Conv3d<T>::out_shape(const Shape& in) const
{
    if (in.c != in_ch_)
        throw ShapeError("conv expects " + std::to_string(in_ch_) + " channels, got " + in.str());
    if (geometry_.stride == 2 && (in.d % 2 || in.h % 2 || in.w % 2))
        throw ShapeError("strided conv needs even spatial extents, got " + in.str());
    return geometry_.out_shape(in, out_ch_);
}

template <typename T>
void Conv3d<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    out.push_back({prefix + "weight", weight_});
    if (bias_.defined())
        out.push_back({prefix + "bias", bias_});
}

template <typename T>
ConvTranspose3d<T>::ConvTranspose3d(std::int64_t in_ch, std::int64_t out_ch, int stride, std::mt19937_64& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      stride_(stride),
      weight_(he_normal<T>(kernels::conv_weight_shape(in_ch, out_ch, stride), in_ch, rng)),
      bias_(make_parameter<T>(vector_shape(out_ch)))
{
}

template <typename T>
Shape ConvTranspose3d<T>::out_shape(const Shape& in) const
{
    if (in.c != in_ch_)
        throw ShapeError("transposed conv expects " + std::to_string(in_ch_) + " channels, got " + in.str());
    return {out_ch_, in.d * stride_, in.h * stride_, in.w * stride_};
}

template <typename T>
void ConvTranspose3d<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    out.push_back({prefix + "weight", weight_});
    out.push_back({prefix + "bias", bias_});
}

template <typename T>
InstanceNorm3d<T>::InstanceNorm3d(std::int64_t channels, T eps)
    : gamma_(make_parameter<T>(vector_shape(channels), T{1})), beta_(make_parameter<T>(vector_shape(channels))), eps_(eps)
{
}

template <typename T>
void InstanceNorm3d<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    out.push_back({prefix + "gamma", gamma_});
    out.push_back({prefix + "beta", beta_});
}

template <typename T>
Linear<T>::Linear(std::int64_t in_features, std::int64_t out_features, std::mt19937_64& rng)
    : weight_(he_normal<T>({out_features, in_features, 1, 1}, in_features, rng)),
      bias_(make_parameter<T>(vector_shape(out_features)))
{
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    out.push_back({prefix + "weight", weight_});
    out.push_back({prefix + "bias", bias_});
}

template <typename T>
ConvNormRelu<T>::ConvNormRelu(std::int64_t in_ch, std::int64_t out_ch, std::mt19937_64& rng)
    : conv_(in_ch, out_ch, {3, 1, 1}, false, rng), norm_(out_ch)
{
}

template <typename T>
void ConvNormRelu<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    conv_.collect(out, prefix + "conv.");
    norm_.collect(out, prefix + "norm.");
}

template <typename T>
SqueezeExcitation<T>::SqueezeExcitation(std::int64_t channels, int reduction, std::mt19937_64& rng)
    : bottleneck_(reduction > 0 ? channels / reduction : 0),
      squeeze_(channels, reduction > 0 ? channels / reduction : 1, rng),
      excite_(reduction > 0 ? channels / reduction : 1, channels, rng)
{
    if (reduction <= 0 || channels % reduction != 0)
        throw ConfigError("SE reduction " + std::to_string(reduction) + " does not divide " +
                          std::to_string(channels) + " channels");
}

template <typename T>
Var<T> SqueezeExcitation<T>::gates(const Var<T>& x) const
{
    return sigmoid(excite_(relu(squeeze_(global_avg_pool(x)))));
}

template <typename T>
void SqueezeExcitation<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    squeeze_.collect(out, prefix + "squeeze.");
    excite_.collect(out, prefix + "excite.");
}

template <typename T>
ResSEBlock<T>::ResSEBlock(std::int64_t in_ch, std::int64_t out_ch, int stride, int se_reduction, std::mt19937_64& rng)
    : stride_(stride),
      conv1_(in_ch, out_ch, {3, stride, 1}, false, rng),
      norm1_(out_ch),
      conv2_(out_ch, out_ch, {3, 1, 1}, false, rng),
      norm2_(out_ch),
      se_(out_ch, se_reduction, rng)
{
    if (stride != 1 && stride != 2)
        throw ConfigError("ResSE stride must be 1 or 2");
    if (in_ch != out_ch || stride != 1)
        projection_.emplace(in_ch, out_ch, ConvGeometry{1, stride, 0}, true, rng);
}

template <typename T>
Var<T> ResSEBlock<T>::operator()(const Var<T>& x) const
{
    if (stride_ == 2)
        (void)out_shape(x.shape());
    Var<T> branch = relu(norm1_(conv1_(x)));
    branch = se_(relu(norm2_(conv2_(branch))));
    const Var<T> skip = projection_ ? (*projection_)(x) : x;
    return relu(add(branch, skip));
}

template <typename T>
Shape ResSEBlock<T>::out_shape(const Shape& in) const
{
    return conv2_.out_shape(conv1_.out_shape(in));
}

template <typename T>
void ResSEBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    conv1_.collect(out, prefix + "conv1.");
    norm1_.collect(out, prefix + "norm1.");
    conv2_.collect(out, prefix + "conv2.");
    norm2_.collect(out, prefix + "norm2.");
    se_.collect(out, prefix + "se.");
    if (projection_)
        projection_->collect(out, prefix + "projection.");
}

template <typename T>
void ResSEBlock<T>::zero_branch()
{
    ParameterList<T> params;
    conv1_.collect(params, "");
    norm1_.collect(params, "");
    conv2_.collect(params, "");
    norm2_.collect(params, "");
    se_.collect(params, "");
    for (auto& p : params)
        zero(p.var);
}

#define SANET_INSTANTIATE_LAYERS(T)                                                                            \
    template class Conv3d<T>;                                                                                  \
    template class ConvTranspose3d<T>;                                                                         \
    template class InstanceNorm3d<T>;                                                                          \
    template class Linear<T>;                                                                                  \
    template class ConvNormRelu<T>;                                                                            \
    template class SqueezeExcitation<T>;                                                                       \
    template class ResSEBlock<T>;

SANET_INSTANTIATE_LAYERS(float)
SANET_INSTANTIATE_LAYERS(double)

}  // namespace sanet::nn
