#pragma once

#include <array>
#include <filesystem>

#include "sanet/tensor.hpp"

namespace sanet::io {

enum class NiftiType : std::int16_t {
    uint8 = 2,
    int16 = 4,
    int32 = 8,
    float32 = 16,
    float64 = 64,
    int8 = 256,
    uint16 = 512,
    uint32 = 768,
};

/// A single 3D scalar volume in (x, y, z) index order, z fastest in memory.
/// Stored as a one-channel tensor of shape (1, X, Y, Z).
struct NiftiVolume {
    Tensor<float> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

/// Reads a NIfTI-1 file (.nii or .nii.gz). Intensity scaling (scl_slope,
/// scl_inter) is applied; 4D files with a singleton fourth axis are accepted.
NiftiVolume read_nifti(const std::filesystem::path& path);

/// Writes a NIfTI-1 single-file image, gzip-compressed when the name ends in ".gz".
void write_nifti(const std::filesystem::path& path, const Tensor<float>& volume, std::array<double, 3> spacing,
                 NiftiType type = NiftiType::float32);

}  // namespace sanet::io
