#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sanet/tensor.hpp"

namespace sanet::metrics {

/// Scores used where a metric has no natural value because a mask is empty.
struct EmptyMaskPolicy {
    double dice_both_empty = 1.0;
    std::optional<double> hd95_if_empty;  ///< unset leaves hd95 undefined
};

/// Dice overlap of two binary masks (voxels > 0.5 are foreground).
double dice(std::span<const float> pred, std::span<const float> truth, const EmptyMaskPolicy& policy = {});

/// Boundary voxels of a mask: foreground voxels with a background face
/// neighbour; voxels outside the volume count as background.
std::vector<std::array<std::int64_t, 3>> surface_voxels(std::span<const float> mask, std::array<std::int64_t, 3> dims);

/// Squared Euclidean distance (in mm^2) from every voxel to the nearest seed voxel.
/// Infinity everywhere when there are no seeds.
std::vector<double> squared_distance_transform(const std::vector<std::array<std::int64_t, 3>>& seeds,
                                               std::array<std::int64_t, 3> dims, std::array<double, 3> spacing);

/// Linear-interpolation percentile (q in [0, 1]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// 95th percentile of the symmetric surface distances in mm. Undefined when
/// either mask is empty unless the policy supplies a value.
std::optional<double> hd95(std::span<const float> pred, std::span<const float> truth,
                           std::array<std::int64_t, 3> dims, std::array<double, 3> spacing,
                           const EmptyMaskPolicy& policy = {});

struct SensSpec {
    std::optional<double> sensitivity;  ///< undefined without positives
    std::optional<double> specificity;  ///< undefined without negatives
};
SensSpec sens_spec(std::span<const float> pred, std::span<const float> truth);

struct RegionScore {
    double dsc = 0.0;
    std::optional<double> hd95;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
};

inline constexpr std::array<const char*, 3> region_names{"WT", "TC", "ET"};

/// Scores for WT, TC and ET.
using RegionScores = std::array<RegionScore, 3>;

/// Compares (3, X, Y, Z) region masks.
RegionScores score_regions(const Tensor<float>& pred, const Tensor<float>& truth, std::array<double, 3> spacing,
                           const EmptyMaskPolicy& policy = {});

/// Compares two {0, 1, 2, 4} label maps through their region masks.
RegionScores score_labels(const Tensor<float>& pred, const Tensor<float>& truth, std::array<double, 3> spacing,
                          const EmptyMaskPolicy& policy = {});

struct CaseScores {
    std::string id;
    RegionScores scores;
};

/// Mean and median of the defined values of each column; undefined if none are.
struct Summary {
    std::array<std::array<std::optional<double>, 4>, 3> mean;
    std::array<std::array<std::optional<double>, 4>, 3> median;
};
Summary summarize(const std::vector<CaseScores>& rows);

/// Columns case_id,region,dsc,hd95,sensitivity,specificity: one row per case and
/// region, then `mean` and `median` rows per region. Undefined values are written as "nan".
void write_scores_csv(const std::filesystem::path& path, const std::vector<CaseScores>& rows);

}  // namespace sanet::metrics
