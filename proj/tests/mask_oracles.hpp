#pragma once

// Brute-force oracles for the surface-distance metrics and random mask generators.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace sanet::test {

using Dims = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;

inline std::vector<float> empty_mask(Dims d) { return std::vector<float>(static_cast<std::size_t>(d[0] * d[1] * d[2]), 0.0f); }

inline void set(std::vector<float>& m, Dims d, std::int64_t z, std::int64_t y, std::int64_t x)
{
    m[static_cast<std::size_t>((z * d[1] + y) * d[2] + x)] = 1.0f;
}

inline std::vector<float> random_mask(Dims d, std::mt19937_64& rng, double density)
{
    std::bernoulli_distribution b(density);
    auto m = empty_mask(d);
    for (float& v : m)
        v = b(rng) ? 1.0f : 0.0f;
    return m;
}

/// Random union of boxes, closer to real segmentations than voxel noise.
inline std::vector<float> blob_mask(Dims d, std::mt19937_64& rng)
{
    auto m = empty_mask(d);
    const int boxes = 1 + static_cast<int>(rng() % 3);
    for (int b = 0; b < boxes; ++b) {
        std::array<std::int64_t, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<std::int64_t>(rng() % d[a]);
            hi[a] = lo[a] + 1 + static_cast<std::int64_t>(rng() % (d[a] - lo[a]));
        }
        for (auto z = lo[0]; z < hi[0]; ++z)
            for (auto y = lo[1]; y < hi[1]; ++y)
                for (auto x = lo[2]; x < hi[2]; ++x)
                    set(m, d, z, y, x);
    }
    return m;
}

// Oracle: surfaces by direct neighbour inspection, all-pairs nearest distances,
// order statistics interpolated by hand.
inline std::vector<std::array<std::int64_t, 3>> oracle_surface(const std::vector<float>& m, Dims d)
{
    std::vector<std::array<std::int64_t, 3>> out;
    const int offs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (std::int64_t z = 0; z < d[0]; ++z)
        for (std::int64_t y = 0; y < d[1]; ++y)
            for (std::int64_t x = 0; x < d[2]; ++x) {
                if (m[static_cast<std::size_t>((z * d[1] + y) * d[2] + x)] == 0.0f)
                    continue;
                bool border = false;
                for (const auto& o : offs) {
                    const std::int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= d[0] || yy >= d[1] || xx >= d[2] ||
                        m[static_cast<std::size_t>((zz * d[1] + yy) * d[2] + xx)] == 0.0f)
                        border = true;
                }
                if (border)
                    out.push_back({z, y, x});
            }
    return out;
}

inline std::optional<double> oracle_hd95(const std::vector<float>& a, const std::vector<float>& b, Dims d, Spacing s)
{
    const auto sa = oracle_surface(a, d), sb = oracle_surface(b, d);
    if (sa.empty() || sb.empty())
        return std::nullopt;
    auto nearest = [&](const std::array<std::int64_t, 3>& p, const std::vector<std::array<std::int64_t, 3>>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : set) {
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double delta = static_cast<double>(p[k] - q[k]) * s[k];
                d2 += delta * delta;
            }
            best = std::min(best, d2);
        }
        return std::sqrt(best);
    };
    std::vector<double> dist;
    for (const auto& p : sa)
        dist.push_back(nearest(p, sb));
    for (const auto& p : sb)
        dist.push_back(nearest(p, sa));
    std::sort(dist.begin(), dist.end());
    const double pos = 0.95 * static_cast<double>(dist.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, dist.size() - 1);
    return dist[lo] + (dist[hi] - dist[lo]) * (pos - static_cast<double>(lo));
}


}  // namespace sanet::test
