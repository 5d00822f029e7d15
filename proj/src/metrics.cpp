#include "sanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sanet/data.hpp"
#include "sanet/error.hpp"

namespace sanet::metrics {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

void check_sizes(std::size_t a, std::size_t b)
{
    if (a != b)
        throw ShapeError("masks differ in size: " + std::to_string(a) + " vs " + std::to_string(b));
}

bool on(float v) { return v > 0.5f; }

// Lower envelope of parabolas s2 * (q - p)^2 + f[p] over one line, in place.
void envelope_1d(double* f, std::int64_t n, std::int64_t stride, double s2, std::vector<double>& g,
                 std::vector<std::int64_t>& v, std::vector<double>& z)
{
    g.resize(static_cast<std::size_t>(n));
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    for (std::int64_t i = 0; i < n; ++i)
        g[i] = f[i * stride];
    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (g[q] == inf)
            continue;
        double s = -inf;
        while (k >= 0) {
            const std::int64_t p = v[k];
            s = ((g[q] + s2 * static_cast<double>(q * q)) - (g[p] + s2 * static_cast<double>(p * p))) /
                (2.0 * s2 * static_cast<double>(q - p));
            if (s > z[k])
                break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : s;
        z[k + 1] = inf;
    }
    if (k < 0)
        return;  // no finite values on this line
    std::int64_t j = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        while (z[j + 1] < static_cast<double>(q))
            ++j;
        const double d = static_cast<double>(q - v[j]);
        f[q * stride] = s2 * d * d + g[v[j]];
    }
}

std::vector<double> column(const std::vector<CaseScores>& rows, std::size_t region, std::size_t metric)
{
    std::vector<double> out;
    for (const auto& r : rows) {
        const auto& s = r.scores[region];
        const std::optional<double> v = metric == 0 ? std::optional<double>(s.dsc)
                                       : metric == 1 ? s.hd95
                                       : metric == 2 ? s.sensitivity
                                                     : s.specificity;
        if (v && std::isfinite(*v))
            out.push_back(*v);
    }
    return out;
}

std::string fmt(const std::optional<double>& v)
{
    if (!v)
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

}  // namespace

double dice(std::span<const float> pred, std::span<const float> truth, const EmptyMaskPolicy& policy)
{
    check_sizes(pred.size(), truth.size());
    std::size_t inter = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = on(pred[i]), b = on(truth[i]);
        inter += a && b;
        p += a;
        t += b;
    }
    if (p + t == 0)
        return policy.dice_both_empty;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

std::vector<std::array<std::int64_t, 3>> surface_voxels(std::span<const float> mask, std::array<std::int64_t, 3> dims)
{
    const auto [D, H, W] = dims;
    check_sizes(mask.size(), static_cast<std::size_t>(D * H * W));
    auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        if (z < 0 || y < 0 || x < 0 || z >= D || y >= H || x >= W)
            return false;
        return on(mask[static_cast<std::size_t>((z * H + y) * W + x)]);
    };
    std::vector<std::array<std::int64_t, 3>> out;
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                if (!at(z, y, x))
                    continue;
                if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) || !at(z, y + 1, x) ||
                    !at(z, y, x - 1) || !at(z, y, x + 1))
                    out.push_back({z, y, x});
            }
    return out;
}

std::vector<double> squared_distance_transform(const std::vector<std::array<std::int64_t, 3>>& seeds,
                                               std::array<std::int64_t, 3> dims, std::array<double, 3> spacing)
{
    const auto [D, H, W] = dims;
    std::vector<double> f(static_cast<std::size_t>(D * H * W), inf);
    for (const auto& s : seeds)
        f[static_cast<std::size_t>((s[0] * H + s[1]) * W + s[2])] = 0.0;

    // Axis 2 (x): lines are contiguous.
#pragma omp parallel
    {
        std::vector<double> g, z;
        std::vector<std::int64_t> v;
#pragma omp for schedule(static)
        for (std::int64_t line = 0; line < D * H; ++line)
            envelope_1d(f.data() + line * W, W, 1, spacing[2] * spacing[2], g, v, z);
#pragma omp for schedule(static)
        for (std::int64_t line = 0; line < D * W; ++line) {
            const std::int64_t zz = line / W, x = line % W;
            envelope_1d(f.data() + zz * H * W + x, H, W, spacing[1] * spacing[1], g, v, z);
        }
#pragma omp for schedule(static)
        for (std::int64_t line = 0; line < H * W; ++line)
            envelope_1d(f.data() + line, D, H * W, spacing[0] * spacing[0], g, v, z);
    }
    return f;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty())
        throw ValidationError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

std::optional<double> hd95(std::span<const float> pred, std::span<const float> truth,
                           std::array<std::int64_t, 3> dims, std::array<double, 3> spacing,
                           const EmptyMaskPolicy& policy)
{
    check_sizes(pred.size(), truth.size());
    const auto sp = surface_voxels(pred, dims);
    const auto st = surface_voxels(truth, dims);
    if (sp.empty() || st.empty())
        return policy.hd95_if_empty;
    const auto to_truth = squared_distance_transform(st, dims, spacing);
    const auto to_pred = squared_distance_transform(sp, dims, spacing);
    const auto H = dims[1], W = dims[2];
    std::vector<double> dist;
    dist.reserve(sp.size() + st.size());
    for (const auto& v : sp)
        dist.push_back(std::sqrt(to_truth[static_cast<std::size_t>((v[0] * H + v[1]) * W + v[2])]));
    for (const auto& v : st)
        dist.push_back(std::sqrt(to_pred[static_cast<std::size_t>((v[0] * H + v[1]) * W + v[2])]));
    return percentile(std::move(dist), 0.95);
}

SensSpec sens_spec(std::span<const float> pred, std::span<const float> truth)
{
    check_sizes(pred.size(), truth.size());
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = on(pred[i]), b = on(truth[i]);
        tp += a && b;
        fn += !a && b;
        tn += !a && !b;
        fp += a && !b;
    }
    SensSpec out;
    if (tp + fn > 0)
        out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0)
        out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return out;
}

RegionScores score_regions(const Tensor<float>& pred, const Tensor<float>& truth, std::array<double, 3> spacing,
                           const EmptyMaskPolicy& policy)
{
    if (pred.shape() != truth.shape() || pred.shape().c != 3)
        throw ShapeError("region masks must both be (3, X, Y, Z), got " + pred.shape().str() + " and " +
                         truth.shape().str());
    const Shape s = pred.shape();
    RegionScores out;
    for (std::int64_t r = 0; r < 3; ++r) {
        const auto p = pred.channel(r), t = truth.channel(r);
        auto& o = out[static_cast<std::size_t>(r)];
        o.dsc = dice(p, t, policy);
        o.hd95 = hd95(p, t, {s.d, s.h, s.w}, spacing, policy);
        const auto ss = sens_spec(p, t);
        o.sensitivity = ss.sensitivity;
        o.specificity = ss.specificity;
    }
    return out;
}

RegionScores score_labels(const Tensor<float>& pred, const Tensor<float>& truth, std::array<double, 3> spacing,
                          const EmptyMaskPolicy& policy)
{
    return score_regions(data::encode_regions(pred), data::encode_regions(truth), spacing, policy);
}

Summary summarize(const std::vector<CaseScores>& rows)
{
    Summary s;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t m = 0; m < 4; ++m) {
            auto col = column(rows, r, m);
            if (col.empty())
                continue;
            double sum = 0.0;
            for (const double v : col)
                sum += v;
            s.mean[r][m] = sum / static_cast<double>(col.size());
            s.median[r][m] = percentile(std::move(col), 0.5);
        }
    return s;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<CaseScores>& rows)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "case_id,region,dsc,hd95,sensitivity,specificity\n";
    for (const auto& row : rows)
        for (std::size_t r = 0; r < 3; ++r) {
            const auto& s = row.scores[r];
            out << row.id << ',' << region_names[r] << ',' << fmt(s.dsc) << ',' << fmt(s.hd95) << ','
                << fmt(s.sensitivity) << ',' << fmt(s.specificity) << '\n';
        }
    const Summary sum = summarize(rows);
    for (const auto& [name, table] : {std::pair{"mean", &sum.mean}, std::pair{"median", &sum.median}})
        for (std::size_t r = 0; r < 3; ++r) {
            out << name << ',' << region_names[r];
            for (const auto& v : (*table)[r])
                out << ',' << fmt(v);
            out << '\n';
        }
    if (!out)
        throw IoError("error writing " + path.string());
}

}  // namespace sanet::metrics
