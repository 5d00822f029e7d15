#include "sanet/network.hpp"

namespace sanet::nn {

void NetworkConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("network config: " + msg); };
    if (in_channels < 1)
        fail("in_channels must be positive");
    if (out_channels < 1)
        fail("out_channels must be positive");
    if (base_width < 1)
        fail("base_width must be positive");
    if (num_scales < 2)
        fail("num_scales must be at least 2");
    if (se_reduction < 1 || base_width % se_reduction != 0)
        fail("base_width " + std::to_string(base_width) + " not divisible by se_reduction " +
             std::to_string(se_reduction));
    if (sa_reduction < 1 || base_width % sa_reduction != 0)
        fail("base_width " + std::to_string(base_width) + " not divisible by sa_reduction " +
             std::to_string(sa_reduction));
    const int stride = 1 << (num_scales - 1);
    if (patch_size < stride || patch_size % stride != 0)
        fail("patch_size " + std::to_string(patch_size) + " not divisible by " + std::to_string(stride));
}

namespace {

const NetworkConfig& validated(const NetworkConfig& cfg)
{
    cfg.validate();
    return cfg;
}

void check_input(const NetworkConfig& cfg, const Shape& in)
{
    const std::int64_t stride = std::int64_t{1} << (cfg.num_scales - 1);
    if (in.c != cfg.in_channels)
        throw ShapeError("network expects " + std::to_string(cfg.in_channels) + " input channels, got " + in.str());
    if (in.d % stride || in.h % stride || in.w % stride || in.d == 0 || in.h == 0 || in.w == 0)
        throw ShapeError("input extents " + in.str() + " must be positive multiples of " + std::to_string(stride));
}

Shape upsampled(const Shape& s, std::int64_t factor) { return {s.c, s.d * factor, s.h * factor, s.w * factor}; }

}  // namespace

// ---------------------------------------------------------------- Encoder

template <typename T>
Encoder<T>::Encoder(const NetworkConfig& cfg, std::mt19937_64& rng)
{
    stages_.emplace_back();
    stages_.back().emplace_back(cfg.in_channels, cfg.width(1), 1, cfg.se_reduction, rng);
    for (int s = 2; s < cfg.num_scales; ++s) {
        stages_.emplace_back();
        stages_.back().emplace_back(cfg.width(s - 1), cfg.width(s), 2, cfg.se_reduction, rng);
        stages_.back().emplace_back(cfg.width(s), cfg.width(s), 1, cfg.se_reduction, rng);
    }
    // one block only at the endpoint
    stages_.emplace_back();
    stages_.back().emplace_back(cfg.width(cfg.num_scales - 1), cfg.width(cfg.num_scales), 2, cfg.se_reduction, rng);
}

template <typename T>
FeaturePyramid<T> Encoder<T>::operator()(const Var<T>& x) const
{
    FeaturePyramid<T> out;
    Var<T> h = x;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (const auto& block : stages_[s])
            h = block(h);
        if (s + 1 < stages_.size())
            out.scales.push_back(h);
    }
    out.endpoint = h;
    return out;
}

template <typename T>
void Encoder<T>::trace(const Shape& in, ShapeTrace& out) const
{
    Shape h = in;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (const auto& block : stages_[s])
            h = block.out_shape(h);
        if (s + 1 < stages_.size())
            out.scales.push_back(h);
    }
    out.endpoint = h;
}

template <typename T>
void Encoder<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    for (std::size_t s = 0; s < stages_.size(); ++s)
        for (std::size_t b = 0; b < stages_[s].size(); ++b)
            stages_[s][b].collect(out, prefix + std::to_string(s) + "." + std::to_string(b) + ".");
}

// ---------------------------------------------------------------- scale attention

template <typename T>
ScaleAttentionBlock<T>::ScaleAttentionBlock(const NetworkConfig& cfg, int target_scale, std::mt19937_64& rng)
    : target_(target_scale),
      channels_(cfg.width(target_scale)),
      squeeze_(channels_, channels_ / cfg.sa_reduction, rng)
{
    const int n = cfg.attention_scales();
    if (target_scale < 1 || target_scale > n)
        throw ConfigError("attention target scale " + std::to_string(target_scale) + " outside 1.." +
                          std::to_string(n));
    for (int e = 1; e <= n; ++e) {
        if (e == target_scale)
            adjust_.emplace_back(std::nullopt);
        else
            adjust_.emplace_back(std::in_place, cfg.width(e), channels_, rng);
    }
    for (int e = 1; e <= n; ++e)
        excitations_.emplace_back(channels_ / cfg.sa_reduction, channels_, rng);
}

template <typename T>
Var<T> ScaleAttentionBlock<T>::transform(const Var<T>& features, int e) const
{
    const auto& adjust = adjust_.at(static_cast<std::size_t>(e - 1));
    if (e == target_)
        return features;
    if (e < target_)
        return (*adjust)(maxpool3d(features, 1 << (target_ - e)));
    return upsample_trilinear((*adjust)(features), 1 << (e - target_));
}

template <typename T>
Shape ScaleAttentionBlock<T>::transform_shape(const Shape& in, int e) const
{
    const auto& adjust = adjust_.at(static_cast<std::size_t>(e - 1));
    if (e == target_)
        return in;
    if (e < target_) {
        const std::int64_t f = std::int64_t{1} << (target_ - e);
        return adjust->out_shape({in.c, in.d / f, in.h / f, in.w / f});
    }
    return upsampled(adjust->out_shape(in), std::int64_t{1} << (e - target_));
}

template <typename T>
Var<T> ScaleAttentionBlock<T>::operator()(const FeaturePyramid<T>& pyramid, ScaleAttentionState<T>* state) const
{
    const int n = num_scales();
    if (static_cast<int>(pyramid.scales.size()) != n)
        throw ShapeError("attention block expects " + std::to_string(n) + " encoder scales, got " +
                         std::to_string(pyramid.scales.size()));
    std::vector<Var<T>> transformed;
    for (int e = 1; e <= n; ++e) {
        transformed.push_back(transform(pyramid.scales[static_cast<std::size_t>(e - 1)], e));
        if (transformed.back().shape() != transformed.front().shape())
            throw ShapeError("transformed scale " + std::to_string(e) + " has shape " +
                             transformed.back().shape().str() + ", expected " + transformed.front().shape().str());
    }
    const Var<T> pooled_sum = add_n(transformed);
    const Var<T> embedding = global_avg_pool(pooled_sum);
    const Var<T> squeezed = relu(squeeze_(embedding));
    std::vector<Var<T>> excitation;
    for (const auto& fc : excitations_)
        excitation.push_back(sigmoid(fc(squeezed)));
    const Var<T> weights = softmax_leading(stack_vectors(excitation));
    std::vector<Var<T>> weighted;
    for (int e = 0; e < n; ++e)
        weighted.push_back(scale_channels(transformed[static_cast<std::size_t>(e)], select_row(weights, e)));
    Var<T> out = add_n(weighted);
    if (state) {
        state->transformed.clear();
        for (const auto& t : transformed)
            state->transformed.push_back(t.value());
        state->pooled_sum = pooled_sum.value();
        state->embedding = embedding.value();
        state->squeezed = squeezed.value();
        state->weights = weights.value();
        state->output = out.value();
    }
    return out;
}

template <typename T>
void ScaleAttentionBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const
{
    for (std::size_t e = 0; e < adjust_.size(); ++e)
        if (adjust_[e])
            adjust_[e]->collect(out, prefix + "adjust" + std::to_string(e + 1) + ".");
    squeeze_.collect(out, prefix + "squeeze.");
    for (std::size_t e = 0; e < excitations_.size(); ++e)
        excitations_[e].collect(out, prefix + "excite" + std::to_string(e + 1) + ".");
}

// ---------------------------------------------------------------- common

template <typename T>
std::int64_t SegmentationNetwork<T>::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : parameters())
        n += p.var.shape().numel();
    return n;
}

template <typename T>
void SegmentationNetwork<T>::zero_grad() const
{
    for (auto p : parameters())
        p.var.zero_grad();
}

// ---------------------------------------------------------------- SA-Net

template <typename T>
SANet<T>::SANet(NetworkConfig cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      rng_(seed),
      encoder_(cfg_, rng_),
      final_(cfg_.width(1), cfg_.out_channels, {1, 1, 0}, true, rng_)
{
    const int n = cfg_.attention_scales();
    for (int d = 1; d <= n; ++d) {
        std::optional<Conv3d<T>> head;
        if (cfg_.deep_supervision && d >= 2)
            head.emplace(cfg_.width(d), cfg_.out_channels, ConvGeometry{1, 1, 0}, true, rng_);
        decoder_.push_back(DecoderStage{ConvTranspose3d<T>(cfg_.width(d + 1), cfg_.width(d), 2, rng_),
                                        ScaleAttentionBlock<T>(cfg_, d, rng_),
                                        ResSEBlock<T>(cfg_.width(d), cfg_.width(d), 1, cfg_.se_reduction, rng_),
                                        std::move(head)});
    }
}

template <typename T>
ModelOutput<T> SANet<T>::forward(const Var<T>& input) const
{
    check_input(cfg_, input.shape());
    return decode(encoder_(input));
}

template <typename T>
ModelOutput<T> SANet<T>::decode(const FeaturePyramid<T>& pyramid, std::vector<ScaleAttentionState<T>>* states) const
{
    ModelOutput<T> out;
    if (states)
        states->clear();
    Var<T> h = pyramid.endpoint;
    for (int d = cfg_.attention_scales(); d >= 1; --d) {
        const DecoderStage& stage = decoder_[static_cast<std::size_t>(d - 1)];
        ScaleAttentionState<T>* state = nullptr;
        if (states)
            state = &states->emplace_back();
        h = stage.block(add(stage.up(h), stage.attention(pyramid, state)));
        if (stage.head)
            out.ds_probabilities.push_back(sigmoid(upsample_trilinear((*stage.head)(h), 1 << (d - 1))));
    }
    out.probabilities = sigmoid(final_(h));
    return out;
}

template <typename T>
ShapeTrace SANet<T>::trace(const Shape& input) const
{
    check_input(cfg_, input);
    ShapeTrace t;
    encoder_.trace(input, t);
    Shape h = t.endpoint;
    for (int d = cfg_.attention_scales(); d >= 1; --d) {
        const DecoderStage& stage = decoder_[static_cast<std::size_t>(d - 1)];
        const Shape up = stage.up.out_shape(h);
        for (int e = 1; e <= cfg_.attention_scales(); ++e) {
            const Shape fused = stage.attention.transform_shape(t.scales[static_cast<std::size_t>(e - 1)], e);
            if (fused != up)
                throw ShapeError("attention scale " + std::to_string(e) + " -> " + std::to_string(d) + " gives " +
                                 fused.str() + ", decoder has " + up.str());
        }
        h = stage.block.out_shape(up);
        if (stage.head)
            t.ds_outputs.push_back(upsampled(h.with_channels(cfg_.out_channels), std::int64_t{1} << (d - 1)));
    }
    t.output = final_.out_shape(h);
    return t;
}

template <typename T>
ParameterList<T> SANet<T>::parameters() const
{
    ParameterList<T> out;
    encoder_.collect(out, "encoder.");
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string prefix = "decoder." + std::to_string(i + 1) + ".";
        decoder_[i].up.collect(out, prefix + "up.");
        decoder_[i].attention.collect(out, prefix + "attention.");
        decoder_[i].block.collect(out, prefix + "block.");
        if (decoder_[i].head)
            decoder_[i].head->collect(out, prefix + "head.");
    }
    final_.collect(out, "final.");
    return out;
}

// ---------------------------------------------------------------- U-Net baseline

template <typename T>
UNetBaseline<T>::UNetBaseline(NetworkConfig cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      rng_(seed),
      encoder_(cfg_, rng_),
      final_(cfg_.width(1), cfg_.out_channels, {1, 1, 0}, true, rng_)
{
    for (int d = 1; d <= cfg_.attention_scales(); ++d) {
        std::optional<Conv3d<T>> head;
        if (cfg_.deep_supervision && d >= 2)
            head.emplace(cfg_.width(d), cfg_.out_channels, ConvGeometry{1, 1, 0}, true, rng_);
        decoder_.push_back(DecoderStage{
            ConvTranspose3d<T>(cfg_.width(d + 1), cfg_.width(d + 1), 2, rng_),
            ResSEBlock<T>(cfg_.width(d + 1) + cfg_.width(d), cfg_.width(d), 1, cfg_.se_reduction, rng_),
            std::move(head)});
    }
}

template <typename T>
ModelOutput<T> UNetBaseline<T>::forward(const Var<T>& input) const
{
    check_input(cfg_, input.shape());
    const FeaturePyramid<T> pyramid = encoder_(input);
    ModelOutput<T> out;
    Var<T> h = pyramid.endpoint;
    for (int d = cfg_.attention_scales(); d >= 1; --d) {
        const DecoderStage& stage = decoder_[static_cast<std::size_t>(d - 1)];
        h = stage.block(concat_channels(stage.up(h), pyramid.scales[static_cast<std::size_t>(d - 1)]));
        if (stage.head)
            out.ds_probabilities.push_back(sigmoid(upsample_trilinear((*stage.head)(h), 1 << (d - 1))));
    }
    out.probabilities = sigmoid(final_(h));
    return out;
}

template <typename T>
ShapeTrace UNetBaseline<T>::trace(const Shape& input) const
{
    check_input(cfg_, input);
    ShapeTrace t;
    encoder_.trace(input, t);
    Shape h = t.endpoint;
    for (int d = cfg_.attention_scales(); d >= 1; --d) {
        const DecoderStage& stage = decoder_[static_cast<std::size_t>(d - 1)];
        const Shape up = stage.up.out_shape(h);
        const Shape skip = t.scales[static_cast<std::size_t>(d - 1)];
        h = stage.block.out_shape(up.with_channels(up.c + skip.c));
        if (stage.head)
            t.ds_outputs.push_back(upsampled(h.with_channels(cfg_.out_channels), std::int64_t{1} << (d - 1)));
    }
    t.output = final_.out_shape(h);
    return t;
}

template <typename T>
ParameterList<T> UNetBaseline<T>::parameters() const
{
    ParameterList<T> out;
    encoder_.collect(out, "encoder.");
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string prefix = "decoder." + std::to_string(i + 1) + ".";
        decoder_[i].up.collect(out, prefix + "up.");
        decoder_[i].block.collect(out, prefix + "block.");
        if (decoder_[i].head)
            decoder_[i].head->collect(out, prefix + "head.");
    }
    final_.collect(out, "final.");
    return out;
}

std::int64_t parameter_count(const NetworkConfig& cfg) { return SANet<float>(cfg).parameter_count(); }

std::int64_t unet_parameter_count(const NetworkConfig& cfg) { return UNetBaseline<float>(cfg).parameter_count(); }

template class Encoder<float>;
template class Encoder<double>;
template class ScaleAttentionBlock<float>;
template class ScaleAttentionBlock<double>;
template class SegmentationNetwork<float>;
template class SegmentationNetwork<double>;
template class SANet<float>;
template class SANet<double>;
template class UNetBaseline<float>;
template class UNetBaseline<double>;

}  // namespace sanet::nn
