#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sanet/data.hpp"
#include "sanet/network.hpp"

namespace sanet::infer {

/// Placement of cubic windows over a region of a volume.
struct WindowPlan {
    std::vector<std::array<std::int64_t, 3>> origins;
    std::int64_t patch_size = 0;
    Box region;
    std::array<std::int64_t, 3> volume{0, 0, 0};
};

/// Per axis: a region no longer than the patch gets one window centred on it
/// (clipped to the volume); a longer one gets ceil(extent / patch) windows
/// spaced evenly from its first to its last voxel. Throws ShapeError when the
/// patch exceeds the volume or the region leaves it.
WindowPlan plan_windows(const Box& region, std::array<std::int64_t, 3> volume, std::int64_t patch_size);

/// Maps a (C_in, p, p, p) patch to (C_out, p, p, p) probabilities.
using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

/// Predictor running the main head of `net` without gradient tracking.
Predictor network_predictor(const nn::SegmentationNetwork<float>& net);

/// Mean of every window prediction covering a voxel; zero where no window reaches.
Tensor<float> sliding_window_infer(const Predictor& predict, const Tensor<float>& volume, const WindowPlan& plan,
                                   std::int64_t out_channels = 3);

/// Plans windows of the network's patch size over `region` and runs them.
Tensor<float> sliding_window_infer(const nn::SegmentationNetwork<float>& net, const Tensor<float>& volume,
                                   const Box& region);

/// Voxel-wise mean of the per-model sliding-window probabilities.
Tensor<float> ensemble_infer(const std::vector<const nn::SegmentationNetwork<float>*>& models,
                             const Tensor<float>& volume, const Box& region);

/// Thresholds WT/TC/ET, clips TC into WT and ET into TC, then assigns
/// ET -> 4, remaining TC -> 1, remaining WT -> 2, else 0.
Tensor<float> decode_labels(const Tensor<float>& probabilities, float threshold = 0.5f);

/// A case ready for the network: z-scored modalities, the foreground box of
/// the raw intensities, and region channels when labels exist.
struct Subject {
    data::Case normalized;                ///< modalities z-scored, labels untouched
    Box region;                           ///< nonzero box of the raw modalities
    std::optional<Tensor<float>> target;  ///< (3, X, Y, Z) region channels

    [[nodiscard]] const std::string& id() const { return normalized.id; }
    [[nodiscard]] const Tensor<float>& input() const { return normalized.modalities; }
};

Subject prepare(data::Case c);

}  // namespace sanet::infer
