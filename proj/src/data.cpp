#include "sanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sanet/nifti.hpp"

namespace sanet::data {
namespace fs = std::filesystem;

namespace {

std::optional<fs::path> find_volume(const fs::path& dir, const std::string& id, const std::string& suffix)
{
    for (const char* ext : {".nii.gz", ".nii"}) {
        fs::path p = dir / (id + "_" + suffix + ext);
        if (fs::exists(p))
            return p;
    }
    return std::nullopt;
}

std::string detect_id(const fs::path& dir)
{
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        for (const std::string tail : {"_t1.nii.gz", "_t1.nii"})
            if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
                ids.push_back(name.substr(0, name.size() - tail.size()));
    }
    if (ids.size() == 1)
        return ids.front();
    return dir.filename().string();
}

bool has_t1(const fs::path& dir)
{
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        for (const std::string tail : {"_t1.nii.gz", "_t1.nii"})
            if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
                return true;
    }
    return false;
}

void copy_channel(const Tensor<float>& from, Tensor<float>& to, std::int64_t c)
{
    std::copy(from.values().begin(), from.values().end(), to.channel(c).begin());
}

}  // namespace

Case load_case(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw IoError("case directory not found: " + dir.string());
    Case c;
    c.id = detect_id(dir);

    std::array<fs::path, 4> paths;
    std::string missing;
    for (std::size_t m = 0; m < modality_names.size(); ++m) {
        const auto p = find_volume(dir, c.id, modality_names[m]);
        if (!p) {
            missing += (missing.empty() ? "" : ", ") + std::string(modality_names[m]) + " (" + c.id + "_" +
                       modality_names[m] + ".nii.gz)";
            continue;
        }
        paths[m] = *p;
    }
    if (!missing.empty())
        throw IoError("case " + dir.string() + ": missing modality file(s): " + missing);

    for (std::size_t m = 0; m < paths.size(); ++m) {
        io::NiftiVolume vol = io::read_nifti(paths[m]);
        if (m == 0) {
            c.modalities = Tensor<float>(vol.data.shape().with_channels(4));
            c.spacing = vol.spacing;
        } else if (vol.data.shape() != c.volume_shape()) {
            throw ValidationError("case " + c.id + ": " + modality_names[m] + " has shape " + vol.data.shape().str() +
                                  " but t1 has " + c.volume_shape().str());
        }
        copy_channel(vol.data, c.modalities, static_cast<std::int64_t>(m));
    }

    if (const auto seg = find_volume(dir, c.id, "seg")) {
        io::NiftiVolume vol = io::read_nifti(*seg);
        if (vol.data.shape() != c.volume_shape())
            throw ValidationError("case " + c.id + ": seg has shape " + vol.data.shape().str() + " but t1 has " +
                                  c.volume_shape().str());
        for (const float v : vol.data.values())
            if (v != 0.0f && v != 1.0f && v != 2.0f && v != 4.0f)
                throw ValidationError("case " + c.id + ": unexpected label value " + std::to_string(v));
        c.labels = std::move(vol.data);
    }
    return c;
}

std::vector<fs::path> list_case_dirs(const fs::path& root)
{
    if (!fs::is_directory(root))
        throw IoError("dataset directory " + root.string() + " does not exist");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && has_t1(entry.path()))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

void write_case(const fs::path& dir, const Case& c)
{
    fs::create_directories(dir);
    const Shape vs = c.volume_shape();
    for (std::size_t m = 0; m < modality_names.size(); ++m) {
        Tensor<float> vol(vs);
        const auto src = c.modalities.channel(static_cast<std::int64_t>(m));
        std::copy(src.begin(), src.end(), vol.values().begin());
        io::write_nifti(dir / (c.id + "_" + modality_names[m] + ".nii.gz"), vol, c.spacing);
    }
    if (c.labels)
        io::write_nifti(dir / (c.id + "_seg.nii.gz"), *c.labels, c.spacing, io::NiftiType::uint8);
}

void normalize(std::span<float> volume)
{
    if (volume.empty())
        return;
    const double n = static_cast<double>(volume.size());
    double sum = 0.0;
    for (const float v : volume)
        sum += v;
    const double mean = sum / n;
    double sq = 0.0;
    for (const float v : volume)
        sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / n);
    if (!(sd > 1e-8)) {
        std::fill(volume.begin(), volume.end(), 0.0f);
        return;
    }
    for (float& v : volume)
        v = static_cast<float>((v - mean) / sd);
}

void normalize_case(Case& c)
{
    for (std::int64_t m = 0; m < c.modalities.shape().c; ++m)
        normalize(c.modalities.channel(m));
}

Tensor<float> encode_regions(const Tensor<float>& labels)
{
    const Shape s = labels.shape();
    if (s.c != 1)
        throw ShapeError("label map must have one channel, got " + s.str());
    Tensor<float> out(s.with_channels(3));
    auto wt = out.channel(0), tc = out.channel(1), et = out.channel(2);
    const auto lab = labels.channel(0);
    for (std::size_t i = 0; i < lab.size(); ++i) {
        const float v = lab[i];
        if (v == 0.0f)
            continue;
        if (v == 2.0f) {
            wt[i] = 1.0f;
        } else if (v == 1.0f) {
            wt[i] = tc[i] = 1.0f;
        } else if (v == 4.0f) {
            wt[i] = tc[i] = et[i] = 1.0f;
        } else {
            throw ValidationError("unexpected label value " + std::to_string(v) + "; expected one of 0, 1, 2, 4");
        }
    }
    return out;
}

std::array<std::int64_t, 3> patch_origin(const Shape& volume, std::int64_t size, std::mt19937_64& rng)
{
    const std::array<std::int64_t, 3> dims{volume.d, volume.h, volume.w};
    if (size < 1)
        throw ShapeError("patch size must be positive");
    for (int a = 0; a < 3; ++a)
        if (size > dims[a])
            throw ShapeError("patch size " + std::to_string(size) + " exceeds volume " + volume.str());
    std::array<std::int64_t, 3> origin{};
    for (int a = 0; a < 3; ++a)
        origin[a] = std::uniform_int_distribution<std::int64_t>(0, dims[a] - size)(rng);
    return origin;
}

Patch sample_patch(const Case& c, std::int64_t size, std::mt19937_64& rng, double foreground_fraction)
{
    Patch p;
    p.origin = patch_origin(c.modalities.shape(), size, rng);
    if (foreground_fraction > 0.0 && c.labels && std::bernoulli_distribution(foreground_fraction)(rng)) {
        const auto lab = c.labels->channel(0);
        std::vector<std::size_t> tumour;
        for (std::size_t i = 0; i < lab.size(); ++i)
            if (lab[i] != 0.0f)
                tumour.push_back(i);
        if (!tumour.empty()) {
            const Shape s = c.labels->shape();
            const std::size_t i = tumour[std::uniform_int_distribution<std::size_t>(0, tumour.size() - 1)(rng)];
            const std::array<std::int64_t, 3> centre{static_cast<std::int64_t>(i) / (s.h * s.w),
                                                     static_cast<std::int64_t>(i) / s.w % s.h,
                                                     static_cast<std::int64_t>(i) % s.w};
            const std::array<std::int64_t, 3> dims{s.d, s.h, s.w};
            for (int a = 0; a < 3; ++a)
                p.origin[a] = std::clamp<std::int64_t>(centre[a] - size / 2, 0, dims[a] - size);
        }
    }
    const std::array<std::int64_t, 3> extent{size, size, size};
    p.input = crop(c.modalities, p.origin, extent);
    if (c.labels)
        p.mask = encode_regions(crop(*c.labels, p.origin, extent));
    return p;
}

void flip_axis(Tensor<float>& t, int axis)
{
    const Shape s = t.shape();
    for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t z = 0; z < s.d; ++z)
            for (std::int64_t y = 0; y < s.h; ++y) {
                if (axis == 2) {
                    float* row = &t(c, z, y, 0);
                    std::reverse(row, row + s.w);
                } else if (axis == 1 && y < s.h / 2) {
                    std::swap_ranges(&t(c, z, y, 0), &t(c, z, y, 0) + s.w, &t(c, z, s.h - 1 - y, 0));
                } else if (axis == 0 && z < s.d / 2) {
                    std::swap_ranges(&t(c, z, y, 0), &t(c, z, y, 0) + s.w, &t(c, s.d - 1 - z, y, 0));
                }
            }
}

Augmentation draw_augmentation(std::mt19937_64& rng, std::int64_t channels)
{
    Augmentation a;
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<float> factor(0.9f, 1.1f);
    for (bool& f : a.flip)
        f = coin(rng);
    for (std::int64_t c = 0; c < std::min<std::int64_t>(channels, 4); ++c)
        a.contrast[static_cast<std::size_t>(c)] = factor(rng);
    return a;
}

void apply_augmentation(const Augmentation& aug, Tensor<float>& input, Tensor<float>& mask)
{
    for (int axis = 0; axis < 3; ++axis)
        if (aug.flip[static_cast<std::size_t>(axis)]) {
            flip_axis(input, axis);
            if (!mask.empty())
                flip_axis(mask, axis);
        }
    for (std::int64_t c = 0; c < std::min<std::int64_t>(input.shape().c, 4); ++c) {
        const float f = aug.contrast[static_cast<std::size_t>(c)];
        if (f != 1.0f)
            for (float& v : input.channel(c))
                v *= f;
    }
}

void augment(Tensor<float>& input, Tensor<float>& mask, std::mt19937_64& rng)
{
    apply_augmentation(draw_augmentation(rng, input.shape().c), input, mask);
}

namespace {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;

    [[nodiscard]] bool contains(double x, double y, double z) const
    {
        const double dx = (x - center[0]) / radii[0];
        const double dy = (y - center[1]) / radii[1];
        const double dz = (z - center[2]) / radii[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

// Mean intensity per tissue class: background brain, edema, necrotic core, enhancing.
constexpr std::array<std::array<double, 4>, 4> tissue_intensity{{
    {0.55, 0.45, 0.30, 0.50},  // t1
    {0.55, 0.45, 0.25, 0.95},  // t1ce
    {0.40, 0.85, 0.70, 0.60},  // t2
    {0.45, 0.95, 0.60, 0.70},  // flair
}};

}  // namespace

Case synth_phantom(std::uint64_t seed, std::int64_t size)
{
    if (size < 16)
        throw ValidationError("phantom size must be at least 16, got " + std::to_string(size));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto S = static_cast<double>(size);
    const double mid = (S - 1.0) / 2.0;

    const Ellipsoid brain{{mid, mid, mid}, {0.44 * S, 0.40 * S, 0.42 * S}};
    Ellipsoid wt;
    for (int a = 0; a < 3; ++a) {
        wt.radii[a] = (0.25 + 0.07 * u(rng)) * S;
        wt.center[a] = mid + (u(rng) - 0.5) * 0.2 * S;
    }
    Ellipsoid tc, et;
    for (int a = 0; a < 3; ++a) {
        tc.radii[a] = 0.7 * wt.radii[a];
        tc.center[a] = wt.center[a] + (u(rng) - 0.5) * 0.1 * wt.radii[a];
        et.radii[a] = 0.6 * tc.radii[a];
        et.center[a] = tc.center[a] + (u(rng) - 0.5) * 0.1 * tc.radii[a];
    }

    Case c;
    c.id = "phantom_" + std::to_string(seed);
    c.modalities = Tensor<float>({4, size, size, size});
    Tensor<float> labels({1, size, size, size});
    std::array<double, 4> sigma{};
    for (std::size_t m = 0; m < 4; ++m) {
        const auto [lo, hi] = std::minmax_element(tissue_intensity[m].begin(), tissue_intensity[m].end());
        sigma[m] = 0.1 * (*hi - *lo);
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::int64_t x = 0; x < size; ++x)
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t z = 0; z < size; ++z) {
                const auto X = static_cast<double>(x), Y = static_cast<double>(y), Z = static_cast<double>(z);
                if (!brain.contains(X, Y, Z))
                    continue;
                // Each region is intersected with its parent, so nesting holds exactly.
                const bool in_wt = wt.contains(X, Y, Z);
                const bool in_tc = in_wt && tc.contains(X, Y, Z);
                const bool in_et = in_tc && et.contains(X, Y, Z);
                const int tissue = in_et ? 3 : in_tc ? 2 : in_wt ? 1 : 0;
                labels(0, x, y, z) = in_et ? 4.0f : in_tc ? 1.0f : in_wt ? 2.0f : 0.0f;
                for (std::size_t m = 0; m < 4; ++m)
                    c.modalities(static_cast<std::int64_t>(m), x, y, z) = static_cast<float>(
                        tissue_intensity[m][static_cast<std::size_t>(tissue)] + sigma[m] * noise(rng));
            }
    c.labels = std::move(labels);
    return c;
}

Box foreground_box(const Tensor<float>& modalities)
{
    const Shape s = modalities.shape();
    Box box{{s.d, s.h, s.w}, {0, 0, 0}};
    bool any = false;
    for (std::int64_t z = 0; z < s.d; ++z)
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t x = 0; x < s.w; ++x) {
                bool nonzero = false;
                for (std::int64_t c = 0; c < s.c && !nonzero; ++c)
                    nonzero = modalities(c, z, y, x) != 0.0f;
                if (!nonzero)
                    continue;
                any = true;
                const std::array<std::int64_t, 3> p{z, y, x};
                for (int a = 0; a < 3; ++a) {
                    box.lo[a] = std::min(box.lo[a], p[a]);
                    box.hi[a] = std::max(box.hi[a], p[a] + 1);
                }
            }
    if (!any)
        return Box{{0, 0, 0}, {s.d, s.h, s.w}};
    return box;
}

}  // namespace sanet::data
