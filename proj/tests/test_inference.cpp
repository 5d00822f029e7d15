#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>

#include "sanet/data.hpp"
#include "sanet/inference.hpp"
#include "test_util.hpp"

using namespace sanet;
using namespace sanet::infer;

namespace {

/// Network stub whose main head outputs a constant.
class ConstantNet final : public nn::SegmentationNetwork<float> {
public:
    ConstantNet(float value, std::int64_t patch) : value_(value)
    {
        cfg_.patch_size = patch;
        cfg_.num_scales = 2;
    }
    nn::ModelOutput<float> forward(const nn::Var<float>& input) const override
    {
        nn::ModelOutput<float> out;
        out.probabilities = nn::Var<float>(Tensor<float>(input.shape().with_channels(3), value_));
        return out;
    }
    [[nodiscard]] nn::ShapeTrace trace(const Shape&) const override { return {}; }
    [[nodiscard]] nn::ParameterList<float> parameters() const override { return {}; }
    [[nodiscard]] const nn::NetworkConfig& config() const override { return cfg_; }

private:
    float value_;
    nn::NetworkConfig cfg_;
};

Box full_box(std::int64_t d, std::int64_t h, std::int64_t w) { return Box{{0, 0, 0}, {d, h, w}}; }

/// Deterministic, position-dependent stub: each output channel is a smooth
/// function of the input's first channel.
Tensor<float> smooth_stub(const Tensor<float>& patch)
{
    const Shape s = patch.shape();
    Tensor<float> out(s.with_channels(3));
    const auto src = patch.channel(0);
    for (std::int64_t c = 0; c < 3; ++c) {
        auto dst = out.channel(c);
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = 0.5f + 0.4f * std::sin(src[i] + static_cast<float>(c));
    }
    return out;
}

}  // namespace

TEST_CASE("plan_windows counts match the per-axis rule")
{
    CHECK(plan_windows(Box{{20, 20, 0}, {180, 180, 160}}, {200, 200, 160}, 128).origins.size() == 8);
    CHECK(plan_windows(full_box(128, 128, 128), {128, 128, 128}, 128).origins.size() == 1);
    const auto plan = plan_windows(Box{{20, 40, 30}, {220, 190, 126}}, {240, 240, 155}, 128);
    CHECK(plan.origins.size() == 4);
    std::set<std::int64_t> xs, ys, zs;
    for (const auto& o : plan.origins) {
        xs.insert(o[0]);
        ys.insert(o[1]);
        zs.insert(o[2]);
    }
    CHECK(xs == std::set<std::int64_t>{20, 92});
    CHECK(ys == std::set<std::int64_t>{40, 62});
    // extent 96 <= 128: one window centred on the region, clipped to the volume
    CHECK(zs == std::set<std::int64_t>{14});
}

TEST_CASE("plan_windows centres and clips a single window")
{
    // region [2, 8) in a 40-long axis, patch 16 -> centred origin -3, clipped to 0
    auto plan = plan_windows(Box{{2, 10, 30}, {8, 20, 38}}, {40, 40, 40}, 16);
    REQUIRE(plan.origins.size() == 1);
    CHECK(plan.origins[0][0] == 0);
    CHECK(plan.origins[0][1] == 7);
    CHECK(plan.origins[0][2] == 24);  // centred 26 clipped to 40 - 16
}

TEST_CASE("plan_windows rejects impossible plans")
{
    CHECK_THROWS_AS(plan_windows(full_box(96, 128, 128), {96, 128, 128}, 128), ShapeError);
    CHECK_THROWS_AS(plan_windows(Box{{0, 0, 0}, {10, 10, 50}}, {40, 40, 40}, 16), ShapeError);
    CHECK_THROWS_AS(plan_windows(Box{{5, 5, 5}, {5, 10, 10}}, {40, 40, 40}, 16), ShapeError);
    CHECK_THROWS_AS(plan_windows(full_box(8, 8, 8), {8, 8, 8}, 0), ShapeError);
}

TEST_CASE("windows cover the region and stay inside the volume")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::array<std::int64_t, 3> vol{};
        Box region;
        const std::int64_t patch = 1 + static_cast<std::int64_t>(rng() % 12);
        for (int a = 0; a < 3; ++a) {
            vol[a] = patch + static_cast<std::int64_t>(rng() % 30);
            region.lo[a] = static_cast<std::int64_t>(rng() % vol[a]);
            region.hi[a] = region.lo[a] + 1 + static_cast<std::int64_t>(rng() % (vol[a] - region.lo[a]));
        }
        const auto plan = plan_windows(region, vol, patch);
        std::vector<int> covered(static_cast<std::size_t>(vol[0] * vol[1] * vol[2]), 0);
        std::size_t expected = 1;
        for (int a = 0; a < 3; ++a) {
            const std::int64_t e = region.extent(a);
            expected *= static_cast<std::size_t>(e <= patch ? 1 : (e + patch - 1) / patch);
        }
        CHECK(plan.origins.size() == expected);
        for (const auto& o : plan.origins) {
            for (int a = 0; a < 3; ++a) {
                CHECK(o[a] >= 0);
                CHECK(o[a] + patch <= vol[a]);
            }
            for (std::int64_t z = 0; z < patch; ++z)
                for (std::int64_t y = 0; y < patch; ++y)
                    for (std::int64_t x = 0; x < patch; ++x)
                        covered[static_cast<std::size_t>(((o[0] + z) * vol[1] + o[1] + y) * vol[2] + o[2] + x)] = 1;
        }
        std::int64_t missing = 0;
        for (std::int64_t z = region.lo[0]; z < region.hi[0]; ++z)
            for (std::int64_t y = region.lo[1]; y < region.hi[1]; ++y)
                for (std::int64_t x = region.lo[2]; x < region.hi[2]; ++x)
                    missing += covered[static_cast<std::size_t>((z * vol[1] + y) * vol[2] + x)] == 0;
        CHECK(missing == 0);
    }
}

TEST_CASE("overlapping windows average their predictions")
{
    // two windows along the last axis: origins 0 and 4 with patch 6 over width 10
    const Tensor<float> volume(Shape{4, 6, 6, 10}, 0.0f);
    const auto plan = plan_windows(full_box(6, 6, 10), {6, 6, 10}, 6);
    REQUIRE(plan.origins.size() == 2);
    const std::vector<float> outputs{0.2f, 0.7f};
    std::size_t call = 0;
    const Predictor stub = [&](const Tensor<float>& patch) {
        return Tensor<float>(patch.shape().with_channels(3), outputs[call++]);
    };
    const Tensor<float> out = sliding_window_infer(stub, volume, plan);

    // brute-force accumulation oracle
    std::vector<double> sum(360, 0.0);
    std::vector<int> cnt(360, 0);
    for (std::size_t w = 0; w < plan.origins.size(); ++w)
        for (std::int64_t z = 0; z < 6; ++z)
            for (std::int64_t y = 0; y < 6; ++y)
                for (std::int64_t x = 0; x < 6; ++x) {
                    const auto i = static_cast<std::size_t>((z * 6 + y) * 10 + plan.origins[w][2] + x);
                    sum[i] += outputs[w];
                    ++cnt[i];
                }
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 360; ++i)
            CHECK(out.channel(c)[i] == doctest::Approx(sum[i] / cnt[i]).epsilon(1e-7));
    CHECK(out(0, 0, 0, 5) == doctest::Approx(0.45));
    CHECK(out(0, 0, 0, 0) == doctest::Approx(0.2));
    CHECK(out(0, 0, 0, 9) == doctest::Approx(0.7));
}

TEST_CASE("voxels outside every window are zero")
{
    const Tensor<float> volume(Shape{4, 20, 20, 20}, 1.0f);
    const auto plan = plan_windows(Box{{0, 0, 0}, {8, 8, 8}}, {20, 20, 20}, 8);
    const Tensor<float> out = sliding_window_infer(smooth_stub, volume, plan);
    CHECK(out(0, 3, 3, 3) > 0.0f);
    CHECK(out(0, 10, 3, 3) == 0.0f);
    CHECK(out(2, 19, 19, 19) == 0.0f);
}

TEST_CASE("result is independent of window order and duplication")
{
    const Tensor<float> volume = test::random_tensor<float>({4, 20, 18, 22}, 5, -3.0, 3.0);
    const auto plan = plan_windows(full_box(20, 18, 22), {20, 18, 22}, 12);
    REQUIRE(plan.origins.size() == 8);
    const Tensor<float> ref = sliding_window_infer(smooth_stub, volume, plan);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        auto shuffled = plan;
        std::shuffle(shuffled.origins.begin(), shuffled.origins.end(), rng);
        CHECK(test::max_abs_diff(sliding_window_infer(smooth_stub, volume, shuffled), ref) <= 1e-7);
    }
    auto doubled = plan;
    doubled.origins.insert(doubled.origins.end(), plan.origins.begin(), plan.origins.end());
    CHECK(test::max_abs_diff(sliding_window_infer(smooth_stub, volume, doubled), ref) <= 1e-7);
}

TEST_CASE("a single covering window reproduces the direct forward pass")
{
    nn::NetworkConfig cfg;
    cfg.base_width = 4;
    cfg.patch_size = 16;
    const nn::SANet<float> net(cfg, 9);
    const Tensor<float> volume = test::random_tensor<float>({4, 16, 16, 16}, 21);
    const Tensor<float> windowed = sliding_window_infer(net, volume, full_box(16, 16, 16));
    nn::NoGradGuard guard;
    const Tensor<float> direct = net.forward(nn::Var<float>(volume)).probabilities.value();
    CHECK(test::max_abs_diff(windowed, direct) < 1e-6);
}

TEST_CASE("mismatched plans and predictors are rejected")
{
    const Tensor<float> volume(Shape{4, 8, 8, 8}, 0.0f);
    const auto plan = plan_windows(full_box(8, 8, 8), {8, 8, 8}, 8);
    const Tensor<float> other(Shape{4, 8, 8, 9}, 0.0f);
    CHECK_THROWS_AS(static_cast<void>(sliding_window_infer(smooth_stub, other, plan)), ShapeError);
    const Predictor bad = [](const Tensor<float>&) { return Tensor<float>(Shape{3, 4, 4, 4}); };
    CHECK_THROWS_AS(static_cast<void>(sliding_window_infer(bad, volume, plan)), ShapeError);
}

TEST_CASE("ensemble averages member probabilities")
{
    const Tensor<float> volume(Shape{4, 10, 10, 10}, 0.0f);
    const Box box = full_box(10, 10, 10);
    const ConstantNet a(0.2f, 8), b(0.6f, 8);
    const Tensor<float> out = ensemble_infer({&a, &b}, volume, box);
    for (const float v : out.values())
        CHECK(v == doctest::Approx(0.4).epsilon(1e-7));
    CHECK_THROWS_AS(static_cast<void>(ensemble_infer({}, volume, box)), ValidationError);
}

TEST_CASE("ensemble of identical models equals the single model")
{
    nn::NetworkConfig cfg;
    cfg.base_width = 4;
    cfg.patch_size = 16;
    const nn::SANet<float> net(cfg, 4);
    const Tensor<float> volume = test::random_tensor<float>({4, 20, 16, 18}, 8);
    const Box box = full_box(20, 16, 18);
    const Tensor<float> single = sliding_window_infer(net, volume, box);
    for (const std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{11}}) {
        const std::vector<const nn::SegmentationNetwork<float>*> models(k, &net);
        CHECK(test::max_abs_diff(ensemble_infer(models, volume, box), single) <= 1e-7);
    }
}

TEST_CASE("decode_labels worked examples")
{
    Tensor<float> probs(Shape{3, 1, 1, 4});
    const float voxels[4][3] = {{0.9f, 0.8f, 0.7f}, {0.9f, 0.1f, 0.05f}, {0.2f, 0.9f, 0.9f}, {0.9f, 0.9f, 0.3f}};
    for (std::int64_t v = 0; v < 4; ++v)
        for (std::int64_t c = 0; c < 3; ++c)
            probs(c, 0, 0, v) = voxels[v][c];
    const Tensor<float> labels = decode_labels(probs, 0.5f);
    CHECK(labels(0, 0, 0, 0) == 4.0f);
    CHECK(labels(0, 0, 0, 1) == 2.0f);
    CHECK(labels(0, 0, 0, 2) == 0.0f);  // TC and ET outside WT are suppressed
    CHECK(labels(0, 0, 0, 3) == 1.0f);
    CHECK_THROWS_AS(static_cast<void>(decode_labels(Tensor<float>(Shape{2, 1, 1, 1}))), ShapeError);
}

TEST_CASE("decode then encode reproduces the nested masks")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor<float> probs = test::random_tensor<float>({3, 6, 7, 8}, seed, 0.0, 1.0);
        const Tensor<float> labels = decode_labels(probs, 0.5f);
        for (const float v : labels.values())
            CHECK((v == 0.0f || v == 1.0f || v == 2.0f || v == 4.0f));
        const Tensor<float> regions = data::encode_regions(labels);
        const auto wt = probs.channel(0), tc = probs.channel(1), et = probs.channel(2);
        for (std::size_t i = 0; i < wt.size(); ++i) {
            const bool w = wt[i] > 0.5f, t = w && tc[i] > 0.5f, e = t && et[i] > 0.5f;
            CHECK(regions.channel(0)[i] == static_cast<float>(w));
            CHECK(regions.channel(1)[i] == static_cast<float>(t));
            CHECK(regions.channel(2)[i] == static_cast<float>(e));
        }
    }
}

TEST_CASE("label maps survive encode then decode")
{
    std::mt19937_64 rng(17);
    const float values[4] = {0.0f, 1.0f, 2.0f, 4.0f};
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> labels(Shape{1, 5, 6, 7});
        for (float& v : labels.values())
            v = values[rng() % 4];
        CHECK(decode_labels(data::encode_regions(labels)) == labels);
    }
}

TEST_CASE("prepare keeps the raw foreground box and normalises the input")
{
    data::Case c = data::synth_phantom(3, 24);
    const Box raw_box = data::foreground_box(c.modalities);
    const Subject s = prepare(c);
    CHECK(s.region == raw_box);
    CHECK(s.id() == c.id);
    REQUIRE(s.target.has_value());
    CHECK(s.target->shape() == c.modalities.shape().with_channels(3));
    double mean = 0.0;
    for (const float v : s.input().channel(0))
        mean += v;
    CHECK(std::abs(mean / static_cast<double>(s.input().channel(0).size())) < 1e-4);
    REQUIRE(s.normalized.labels.has_value());
    CHECK(*s.normalized.labels == *c.labels);
}
