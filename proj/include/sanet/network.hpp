#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sanet/layers.hpp"

namespace sanet::nn {

struct NetworkConfig {
    int in_channels = 4;
    int out_channels = 3;
    int base_width = 24;
    /// Encoder scales including the endpoint; the attention blocks see num_scales - 1 of them.
    int num_scales = 5;
    int se_reduction = 4;
    int sa_reduction = 4;
    int patch_size = 128;
    bool deep_supervision = true;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
    /// Channel width at 1-based scale s.
    [[nodiscard]] std::int64_t width(int scale) const { return static_cast<std::int64_t>(base_width) << (scale - 1); }
    [[nodiscard]] int attention_scales() const { return num_scales - 1; }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Encoder outputs: scales[e-1] holds S_e for e = 1..N, plus the deepest block.
template <typename T>
struct FeaturePyramid {
    std::vector<Var<T>> scales;
    Var<T> endpoint;
};

/// Intermediates of one scale-attention block, captured on request.
template <typename T>
struct ScaleAttentionState {
    std::vector<Tensor<T>> transformed;  ///< one per encoder scale, all shaped like the output
    Tensor<T> pooled_sum;                ///< sum of the transformed maps
    Tensor<T> embedding;                 ///< spatial mean of pooled_sum, length C_d
    Tensor<T> squeezed;                  ///< length C_d / r
    Tensor<T> weights;                   ///< (N, C_d, 1, 1), softmax-normalised over N
    Tensor<T> output;
};

template <typename T>
struct ModelOutput {
    Var<T> probabilities;                 ///< (out_channels, D, H, W), channel order WT/TC/ET
    std::vector<Var<T>> ds_probabilities; ///< deep-supervision heads, coarsest scale first
};

/// Shapes produced by a network for a given input, computed without running it.
struct ShapeTrace {
    std::vector<Shape> scales;
    Shape endpoint;
    Shape output;
    std::vector<Shape> ds_outputs;
};

template <typename T>
class Encoder {
public:
    Encoder(const NetworkConfig& cfg, std::mt19937_64& rng);

    FeaturePyramid<T> operator()(const Var<T>& x) const;
    void trace(const Shape& in, ShapeTrace& out) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

private:
    std::vector<std::vector<ResSEBlock<T>>> stages_;
};

/// Full-scale fusion into decoder scale d: every encoder scale is brought to
/// (C_d, extent_d), the maps are summed, pooled and squeezed, and N per-scale
/// excitations are softmax-normalised across scales per channel to weight the sum.
template <typename T>
class ScaleAttentionBlock {
public:
    ScaleAttentionBlock(const NetworkConfig& cfg, int target_scale, std::mt19937_64& rng);

    Var<T> operator()(const FeaturePyramid<T>& pyramid, ScaleAttentionState<T>* state = nullptr) const;
    /// Brings encoder scale e (1-based) to this block's scale.
    Var<T> transform(const Var<T>& features, int source_scale) const;
    [[nodiscard]] Shape transform_shape(const Shape& in, int source_scale) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    [[nodiscard]] int target_scale() const { return target_; }
    [[nodiscard]] int num_scales() const { return static_cast<int>(excitations_.size()); }
    Linear<T>& squeeze() { return squeeze_; }
    Linear<T>& excitation(int source_scale) { return excitations_.at(static_cast<std::size_t>(source_scale - 1)); }

private:
    int target_;
    std::int64_t channels_;
    std::vector<std::optional<ConvNormRelu<T>>> adjust_;
    Linear<T> squeeze_;
    std::vector<Linear<T>> excitations_;
};

/// Common surface of the segmentation networks.
template <typename T>
class SegmentationNetwork {
public:
    virtual ~SegmentationNetwork() = default;

    virtual ModelOutput<T> forward(const Var<T>& input) const = 0;
    [[nodiscard]] virtual ShapeTrace trace(const Shape& input) const = 0;
    [[nodiscard]] virtual ParameterList<T> parameters() const = 0;
    [[nodiscard]] virtual const NetworkConfig& config() const = 0;

    [[nodiscard]] std::int64_t parameter_count() const;
    void zero_grad() const;
};

template <typename T>
class SANet final : public SegmentationNetwork<T> {
public:
    explicit SANet(NetworkConfig cfg, std::uint64_t seed = 0);

    ModelOutput<T> forward(const Var<T>& input) const override;
    FeaturePyramid<T> encode(const Var<T>& input) const { return encoder_(input); }
    /// `states`, when given, receives one entry per decoder scale d = N..1.
    ModelOutput<T> decode(const FeaturePyramid<T>& pyramid, std::vector<ScaleAttentionState<T>>* states = nullptr) const;
    [[nodiscard]] ShapeTrace trace(const Shape& input) const override;
    [[nodiscard]] ParameterList<T> parameters() const override;
    [[nodiscard]] const NetworkConfig& config() const override { return cfg_; }

    /// Attention block feeding decoder scale d (1-based).
    ScaleAttentionBlock<T>& attention(int d) { return decoder_.at(static_cast<std::size_t>(d - 1)).attention; }
    const ScaleAttentionBlock<T>& attention(int d) const { return decoder_.at(static_cast<std::size_t>(d - 1)).attention; }

private:
    struct DecoderStage {
        ConvTranspose3d<T> up;
        ScaleAttentionBlock<T> attention;
        ResSEBlock<T> block;
        std::optional<Conv3d<T>> head;
    };

    NetworkConfig cfg_;
    std::mt19937_64 rng_;
    Encoder<T> encoder_;
    std::vector<DecoderStage> decoder_;  // index d - 1
    Conv3d<T> final_;
};

/// Vanilla 3D U-Net over the same encoder: a width-preserving transposed conv,
/// concatenation with the same-scale encoder output, then one ResSE block.
template <typename T>
class UNetBaseline final : public SegmentationNetwork<T> {
public:
    explicit UNetBaseline(NetworkConfig cfg, std::uint64_t seed = 0);

    ModelOutput<T> forward(const Var<T>& input) const override;
    [[nodiscard]] ShapeTrace trace(const Shape& input) const override;
    [[nodiscard]] ParameterList<T> parameters() const override;
    [[nodiscard]] const NetworkConfig& config() const override { return cfg_; }

private:
    struct DecoderStage {
        ConvTranspose3d<T> up;
        ResSEBlock<T> block;
        std::optional<Conv3d<T>> head;
    };

    NetworkConfig cfg_;
    std::mt19937_64 rng_;
    Encoder<T> encoder_;
    std::vector<DecoderStage> decoder_;
    Conv3d<T> final_;
};

/// Trainable scalar count of an SA-Net built from `cfg`.
std::int64_t parameter_count(const NetworkConfig& cfg);
/// Trainable scalar count of the matched U-Net baseline.
std::int64_t unet_parameter_count(const NetworkConfig& cfg);

}  // namespace sanet::nn
