#include "sanet/inference.hpp"

#include <algorithm>

namespace sanet::infer {

namespace {

std::vector<std::int64_t> axis_origins(std::int64_t lo, std::int64_t hi, std::int64_t dim, std::int64_t patch)
{
    const std::int64_t extent = hi - lo;
    if (extent <= patch) {
        const std::int64_t centred = lo - (patch - extent) / 2;
        return {std::clamp<std::int64_t>(centred, 0, dim - patch)};
    }
    const std::int64_t n = (extent + patch - 1) / patch;
    std::vector<std::int64_t> out;
    const std::int64_t span = extent - patch;
    for (std::int64_t i = 0; i < n; ++i)
        out.push_back(lo + (span * i + (n - 1) / 2) / (n - 1));  // rounded i * span / (n - 1)
    return out;
}

}  // namespace

WindowPlan plan_windows(const Box& region, std::array<std::int64_t, 3> volume, std::int64_t patch_size)
{
    if (patch_size < 1)
        throw ShapeError("patch size must be positive");
    for (int a = 0; a < 3; ++a) {
        if (patch_size > volume[a])
            throw ShapeError("patch size " + std::to_string(patch_size) + " exceeds volume extent " +
                             std::to_string(volume[a]) + " on axis " + std::to_string(a));
        if (region.lo[a] < 0 || region.hi[a] > volume[a] || region.lo[a] >= region.hi[a])
            throw ShapeError("window region is empty or leaves the volume on axis " + std::to_string(a));
    }
    WindowPlan plan;
    plan.patch_size = patch_size;
    plan.region = region;
    plan.volume = volume;
    std::array<std::vector<std::int64_t>, 3> axes;
    for (int a = 0; a < 3; ++a)
        axes[a] = axis_origins(region.lo[a], region.hi[a], volume[a], patch_size);
    for (const auto z : axes[0])
        for (const auto y : axes[1])
            for (const auto x : axes[2])
                plan.origins.push_back({z, y, x});
    return plan;
}

Predictor network_predictor(const nn::SegmentationNetwork<float>& net)
{
    return [&net](const Tensor<float>& patch) {
        nn::NoGradGuard guard;
        return net.forward(nn::Var<float>(patch)).probabilities.value();
    };
}

Tensor<float> sliding_window_infer(const Predictor& predict, const Tensor<float>& volume, const WindowPlan& plan,
                                   std::int64_t out_channels)
{
    const Shape vs = volume.shape();
    if (std::array<std::int64_t, 3>{vs.d, vs.h, vs.w} != plan.volume)
        throw ShapeError("window plan was made for a different volume than " + vs.str());
    const std::int64_t p = plan.patch_size;
    const Shape out_shape = vs.with_channels(out_channels);
    std::vector<double> sum(static_cast<std::size_t>(out_shape.numel()), 0.0);
    std::vector<std::uint32_t> count(static_cast<std::size_t>(vs.spatial()), 0);

    for (const auto& o : plan.origins) {
        const Tensor<float> pred = predict(crop(volume, o, {p, p, p}));
        if (pred.shape() != Shape{out_channels, p, p, p})
            throw ShapeError("predictor returned " + pred.shape().str() + " for a " + std::to_string(p) + "^3 patch");
        for (std::int64_t z = 0; z < p; ++z)
            for (std::int64_t y = 0; y < p; ++y) {
                const auto base = static_cast<std::size_t>(((o[0] + z) * vs.h + (o[1] + y)) * vs.w + o[2]);
                for (std::int64_t x = 0; x < p; ++x)
                    ++count[base + static_cast<std::size_t>(x)];
                for (std::int64_t c = 0; c < out_channels; ++c) {
                    const float* src = &pred(c, z, y, 0);
                    double* dst = sum.data() + static_cast<std::size_t>(c * vs.spatial()) + base;
                    for (std::int64_t x = 0; x < p; ++x)
                        dst[x] += src[x];
                }
            }
    }

    Tensor<float> out(out_shape);
    const auto n = static_cast<std::size_t>(vs.spatial());
    for (std::int64_t c = 0; c < out_channels; ++c) {
        auto dst = out.channel(c);
        const double* src = sum.data() + static_cast<std::size_t>(c) * n;
        for (std::size_t i = 0; i < n; ++i)
            dst[i] = count[i] ? static_cast<float>(src[i] / count[i]) : 0.0f;
    }
    return out;
}

Tensor<float> sliding_window_infer(const nn::SegmentationNetwork<float>& net, const Tensor<float>& volume,
                                   const Box& region)
{
    const Shape vs = volume.shape();
    const auto plan = plan_windows(region, {vs.d, vs.h, vs.w}, net.config().patch_size);
    return sliding_window_infer(network_predictor(net), volume, plan, net.config().out_channels);
}

Tensor<float> ensemble_infer(const std::vector<const nn::SegmentationNetwork<float>*>& models,
                             const Tensor<float>& volume, const Box& region)
{
    if (models.empty())
        throw ValidationError("ensemble needs at least one model");
    std::vector<double> sum;
    Shape shape;
    for (const auto* m : models) {
        const Tensor<float> probs = sliding_window_infer(*m, volume, region);
        if (sum.empty()) {
            shape = probs.shape();
            sum.assign(probs.size(), 0.0);
        } else if (probs.shape() != shape) {
            throw ShapeError("ensemble members disagree on output shape");
        }
        for (std::size_t i = 0; i < sum.size(); ++i)
            sum[i] += probs[i];
    }
    Tensor<float> out(shape);
    const auto k = static_cast<double>(models.size());
    for (std::size_t i = 0; i < sum.size(); ++i)
        out[i] = static_cast<float>(sum[i] / k);
    return out;
}

Tensor<float> decode_labels(const Tensor<float>& probabilities, float threshold)
{
    const Shape s = probabilities.shape();
    if (s.c != 3)
        throw ShapeError("decode_labels expects WT/TC/ET channels, got " + s.str());
    Tensor<float> out(s.with_channels(1));
    const auto wt = probabilities.channel(0), tc = probabilities.channel(1), et = probabilities.channel(2);
    auto lab = out.channel(0);
    for (std::size_t i = 0; i < lab.size(); ++i) {
        const bool w = wt[i] > threshold;
        const bool t = w && tc[i] > threshold;
        const bool e = t && et[i] > threshold;
        lab[i] = e ? 4.0f : t ? 1.0f : w ? 2.0f : 0.0f;
    }
    return out;
}

Subject prepare(data::Case c)
{
    Subject s;
    s.region = data::foreground_box(c.modalities);
    data::normalize_case(c);
    if (c.labels)
        s.target = data::encode_regions(*c.labels);
    s.normalized = std::move(c);
    return s;
}

}  // namespace sanet::infer
