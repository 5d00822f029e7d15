#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sanet/tensor.hpp"

namespace sanet::data {

/// Modality order used everywhere: channel i of a case holds modality_names[i].
inline constexpr std::array<const char*, 4> modality_names{"t1", "t1ce", "t2", "flair"};

/// One subject. Volumes are in (x, y, z) index order, z fastest.
struct Case {
    std::string id;
    Tensor<float> modalities;             ///< (4, X, Y, Z)
    std::optional<Tensor<float>> labels;  ///< (1, X, Y, Z), values in {0, 1, 2, 4}
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    [[nodiscard]] Shape volume_shape() const { return modalities.shape().with_channels(1); }
};

/// Loads `<dir>/<id>_{t1,t1ce,t2,flair}.nii[.gz]` and, when present, `<id>_seg.nii[.gz]`.
/// The id is the directory name unless a single `*_t1.nii[.gz]` file names another.
Case load_case(const std::filesystem::path& dir);

/// Sorted subdirectories of `root` holding a `*_t1.nii[.gz]` volume.
/// Throws IoError if `root` is not a directory.
std::vector<std::filesystem::path> list_case_dirs(const std::filesystem::path& root);

/// Writes a case in the same layout `load_case` reads (gzip-compressed).
void write_case(const std::filesystem::path& dir, const Case& c);

/// Z-score normalisation of one volume over all of its voxels; a constant
/// volume becomes all zeros.
void normalize(std::span<float> volume);
void normalize_case(Case& c);

/// Nested region channels WT = {1,2,4}, TC = {1,4}, ET = {4} from a label map.
/// Throws ValidationError on any other label value.
Tensor<float> encode_regions(const Tensor<float>& labels);

struct Patch {
    Tensor<float> input;  ///< (4, s, s, s)
    Tensor<float> mask;   ///< (3, s, s, s); empty if the case has no labels
    std::array<std::int64_t, 3> origin{0, 0, 0};
};

/// Origin of a cube of side `size`, uniform over every position that fits in `volume`.
std::array<std::int64_t, 3> patch_origin(const Shape& volume, std::int64_t size, std::mt19937_64& rng);

/// Uniformly positioned cube of side `size`. With probability
/// `foreground_fraction` the cube is instead centred (then clipped) on a
/// random tumour voxel, when the case has any.
Patch sample_patch(const Case& c, std::int64_t size, std::mt19937_64& rng, double foreground_fraction = 0.0);

struct Augmentation {
    std::array<bool, 3> flip{false, false, false};
    std::array<float, 4> contrast{1.0f, 1.0f, 1.0f, 1.0f};
};

/// Each axis flipped with probability 0.5, each channel scaled by U[0.9, 1.1].
Augmentation draw_augmentation(std::mt19937_64& rng, std::int64_t channels = 4);
void apply_augmentation(const Augmentation& aug, Tensor<float>& input, Tensor<float>& mask);
void augment(Tensor<float>& input, Tensor<float>& mask, std::mt19937_64& rng);

/// Flips every channel of `t` along spatial axis 0, 1 or 2 in place.
void flip_axis(Tensor<float>& t, int axis);

/// Deterministic synthetic subject: a brain-like ellipsoid holding nested
/// tumour ellipsoids (edema, core, enhancing rim), four modalities with
/// per-region intensities plus Gaussian noise, labels in {0, 1, 2, 4}.
Case synth_phantom(std::uint64_t seed, std::int64_t size);

/// Tight box around voxels that are nonzero in any modality; the whole
/// volume if every voxel is zero.
Box foreground_box(const Tensor<float>& modalities);

}  // namespace sanet::data
