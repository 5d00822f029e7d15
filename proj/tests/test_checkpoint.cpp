#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <iterator>

#include "sanet/checkpoint.hpp"
#include "test_util.hpp"

using namespace sanet;
using namespace sanet::ckpt;
using sanet::test::TempDir;

namespace {

nn::NetworkConfig tiny(int width = 4)
{
    nn::NetworkConfig cfg;
    cfg.base_width = width;
    cfg.patch_size = 16;
    return cfg;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary);
    out << s;
}

bool same_weights(const nn::SegmentationNetwork<float>& a, const nn::SegmentationNetwork<float>& b)
{
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size())
        return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].name != pb[i].name || !(pa[i].var.value() == pb[i].var.value()))
            return false;
    return true;
}

}  // namespace

TEST_CASE("weights and metadata survive a round trip")
{
    TempDir dir("ckpt");
    const nn::SANet<float> src(tiny(), 1);
    CheckpointMeta meta;
    meta.config = tiny();
    meta.epoch = 17;
    meta.val_loss = 0.4321;
    meta.ema_val_loss = 0.5;
    meta.seed = 1;
    meta.tag = "best_val";
    save_checkpoint(dir / "a.ckpt", src, meta);
    CHECK(std::filesystem::exists(dir / "a.ckpt.json"));

    const nn::SANet<float> dst(tiny(), 2);
    CHECK_FALSE(same_weights(src, dst));
    load_weights(dir / "a.ckpt", dst);
    CHECK(same_weights(src, dst));

    const auto back = read_metadata(dir / "a.ckpt");
    CHECK(back.config == meta.config);
    CHECK(back.architecture == "sanet");
    CHECK(back.epoch == 17);
    CHECK(back.val_loss == 0.4321);
    CHECK(back.ema_val_loss == 0.5);
    CHECK(back.seed == 1);
    CHECK(back.tag == "best_val");

    const Tensor<float> x = test::random_tensor<float>({4, 16, 16, 16}, 3);
    nn::NoGradGuard guard;
    CHECK(src.forward(nn::Var<float>(x)).probabilities.value() == dst.forward(nn::Var<float>(x)).probabilities.value());
}

TEST_CASE("load_model rebuilds the recorded architecture")
{
    TempDir dir("ckpt");
    const nn::UNetBaseline<float> unet(tiny(), 5);
    CheckpointMeta meta;
    meta.config = tiny();
    meta.architecture = "unet";
    save_checkpoint(dir / "u.ckpt", unet, meta);
    CheckpointMeta got;
    const auto net = load_model(dir / "u.ckpt", &got);
    CHECK(got.architecture == "unet");
    CHECK(std::isnan(got.val_loss));
    CHECK(dynamic_cast<const nn::UNetBaseline<float>*>(net.get()) != nullptr);
    CHECK(same_weights(unet, *net));
    CHECK_THROWS_AS(static_cast<void>(make_network("resnet", tiny(), 0)), ConfigError);
}

TEST_CASE("corrupt or truncated archives are rejected")
{
    TempDir dir("ckpt");
    const nn::SANet<float> net(tiny(), 1);
    CheckpointMeta meta;
    meta.config = tiny();
    save_checkpoint(dir / "a.ckpt", net, meta);
    const std::string good = slurp(dir / "a.ckpt");

    std::string flipped = good;
    flipped[good.size() / 2] = static_cast<char>(flipped[good.size() / 2] ^ 0x40);
    spit(dir / "a.ckpt", flipped);
    CHECK_THROWS_WITH_AS(load_weights(dir / "a.ckpt", net), doctest::Contains("checksum"), IoError);

    spit(dir / "a.ckpt", good.substr(0, good.size() - 100));
    CHECK_THROWS_AS(load_weights(dir / "a.ckpt", net), IoError);

    spit(dir / "a.ckpt", "NOTACKPT" + good.substr(8));
    CHECK_THROWS_WITH_AS(load_weights(dir / "a.ckpt", net), doctest::Contains("not a checkpoint"), IoError);

    CHECK_THROWS_AS(load_weights(dir / "missing.ckpt", net), IoError);
    CHECK_THROWS_AS(static_cast<void>(read_metadata(dir / "missing.ckpt")), IoError);

    spit(dir / "a.ckpt.json", "{\"format_version\": 1}");
    CHECK_THROWS_WITH_AS(static_cast<void>(read_metadata(dir / "a.ckpt")), doctest::Contains("malformed"), IoError);
}

TEST_CASE("architecture mismatches are reported")
{
    TempDir dir("ckpt");
    const nn::SANet<float> net(tiny(4), 1);
    CheckpointMeta meta;
    meta.config = tiny(4);
    save_checkpoint(dir / "a.ckpt", net, meta);

    const nn::SANet<float> wider(tiny(8), 1);
    CHECK_THROWS_AS(load_weights(dir / "a.ckpt", wider), ShapeError);
    // the baseline shares tensor names with different shapes
    const nn::UNetBaseline<float> unet(tiny(4), 1);
    CHECK_THROWS_AS(load_weights(dir / "a.ckpt", unet), ShapeError);

    // without deep supervision the archive has head tensors the network lacks
    auto plain = tiny(4);
    plain.deep_supervision = false;
    const nn::SANet<float> headless(plain, 1);
    CHECK_THROWS_WITH_AS(load_weights(dir / "a.ckpt", headless), doctest::Contains("tensors"), ValidationError);
    save_checkpoint(dir / "b.ckpt", headless, meta);
    CHECK_THROWS_WITH_AS(load_weights(dir / "b.ckpt", net), doctest::Contains("missing parameter"), ValidationError);
}
