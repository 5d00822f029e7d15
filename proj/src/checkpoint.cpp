#include "sanet/checkpoint.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "sanet/error.hpp"

namespace sanet::ckpt {

namespace {

using json = nlohmann::json;

constexpr char magic[8] = {'S', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};

template <typename V>
void put(std::string& buf, V v)
{
    char bytes[sizeof(V)];
    std::memcpy(bytes, &v, sizeof(V));
    buf.append(bytes, sizeof(V));
}

class Reader {
public:
    Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

    template <typename V>
    V get()
    {
        V v;
        std::memcpy(&v, take(sizeof(V)), sizeof(V));
        return v;
    }

    const char* take(std::size_t n)
    {
        if (n > data_.size() - pos_)
            throw IoError(path_.string() + ": truncated checkpoint");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

private:
    const std::string& data_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(const char* data, std::size_t n)
{
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json config_json(const nn::NetworkConfig& c)
{
    return {{"in_channels", c.in_channels},   {"out_channels", c.out_channels}, {"base_width", c.base_width},
            {"num_scales", c.num_scales},     {"se_reduction", c.se_reduction}, {"sa_reduction", c.sa_reduction},
            {"patch_size", c.patch_size},     {"deep_supervision", c.deep_supervision}};
}

nn::NetworkConfig config_from(const json& j)
{
    nn::NetworkConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.num_scales = j.at("num_scales").get<int>();
    c.se_reduction = j.at("se_reduction").get<int>();
    c.sa_reduction = j.at("sa_reduction").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.deep_supervision = j.at("deep_supervision").get<bool>();
    return c;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out)
        throw IoError("error writing " + path.string());
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint)
{
    auto p = checkpoint;
    p += ".json";
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const nn::SegmentationNetwork<float>& net,
                     const CheckpointMeta& meta)
{
    const auto params = net.parameters();
    std::string buf(magic, sizeof magic);
    put<std::uint32_t>(buf, format_version);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
        buf += p.name;
        const Shape s = p.var.shape();
        for (const std::int64_t e : {s.c, s.d, s.h, s.w})
            put<std::int64_t>(buf, e);
        const auto& v = p.var.value().values();
        buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    put<std::uint32_t>(buf, crc(buf.data(), buf.size()));
    write_file(path, buf);

    const json side = {{"format_version", format_version},
                       {"architecture", meta.architecture},
                       {"config", config_json(meta.config)},
                       {"epoch", meta.epoch},
                       {"val_loss", number_or_null(meta.val_loss)},
                       {"ema_val_loss", number_or_null(meta.ema_val_loss)},
                       {"seed", meta.seed},
                       {"tag", meta.tag},
                       {"parameter_count", net.parameter_count()}};
    write_file(sidecar_path(path), side.dump(2) + "\n");
}

CheckpointMeta read_metadata(const std::filesystem::path& checkpoint)
{
    const auto path = sidecar_path(checkpoint);
    json j;
    try {
        j = json::parse(read_file(path));
        CheckpointMeta m;
        const auto version = j.at("format_version").get<std::uint32_t>();
        if (version != format_version)
            throw IoError(path.string() + ": unsupported metadata version " + std::to_string(version));
        m.architecture = j.at("architecture").get<std::string>();
        m.config = config_from(j.at("config"));
        m.epoch = j.at("epoch").get<int>();
        m.val_loss = number_or_nan(j.at("val_loss"));
        m.ema_val_loss = number_or_nan(j.at("ema_val_loss"));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.tag = j.value("tag", std::string{});
        return m;
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed metadata: " + e.what());
    }
}

void load_weights(const std::filesystem::path& checkpoint, const nn::SegmentationNetwork<float>& net)
{
    const std::string data = read_file(checkpoint);
    const std::string& where = checkpoint.string();
    if (data.size() < sizeof magic + 12 || std::memcmp(data.data(), magic, sizeof magic) != 0)
        throw IoError(where + ": not a checkpoint");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
    if (crc(data.data(), data.size() - 4) != stored_crc)
        throw IoError(where + ": checksum mismatch");

    Reader r(data, checkpoint);
    r.take(sizeof magic);
    const auto version = r.get<std::uint32_t>();
    if (version != format_version)
        throw IoError(where + ": unsupported format version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();

    std::map<std::string, std::pair<Shape, const char*>> archived;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        std::string name(r.take(len), len);
        Shape s;
        s.c = r.get<std::int64_t>();
        s.d = r.get<std::int64_t>();
        s.h = r.get<std::int64_t>();
        s.w = r.get<std::int64_t>();
        if (s.c < 0 || s.d < 0 || s.h < 0 || s.w < 0)
            throw IoError(where + ": negative extent for " + name);
        const char* bytes = r.take(static_cast<std::size_t>(s.numel()) * sizeof(float));
        archived.emplace(std::move(name), std::pair{s, bytes});
    }
    if (r.remaining() != 4)
        throw IoError(where + ": trailing bytes after tensors");

    auto params = net.parameters();
    for (auto& p : params) {
        const auto it = archived.find(p.name);
        if (it == archived.end())
            throw ValidationError(where + ": missing parameter " + p.name);
        if (it->second.first != p.var.shape())
            throw ShapeError(where + ": parameter " + p.name + " has shape " + it->second.first.str() +
                             ", network expects " + p.var.shape().str());
    }
    if (archived.size() != params.size())
        throw ValidationError(where + ": archive holds " + std::to_string(archived.size()) +
                              " tensors, network has " + std::to_string(params.size()));
    for (auto& p : params) {
        const auto v = p.var.value().values();
        std::memcpy(v.data(), archived.at(p.name).second, v.size() * sizeof(float));
    }
}

std::unique_ptr<nn::SegmentationNetwork<float>> make_network(const std::string& architecture,
                                                             const nn::NetworkConfig& cfg, std::uint64_t seed)
{
    if (architecture == "sanet")
        return std::make_unique<nn::SANet<float>>(cfg, seed);
    if (architecture == "unet")
        return std::make_unique<nn::UNetBaseline<float>>(cfg, seed);
    throw ConfigError("unknown architecture '" + architecture + "' (expected sanet or unet)");
}

std::unique_ptr<nn::SegmentationNetwork<float>> load_model(const std::filesystem::path& checkpoint,
                                                           CheckpointMeta* meta)
{
    const CheckpointMeta m = read_metadata(checkpoint);
    auto net = make_network(m.architecture, m.config, m.seed);
    load_weights(checkpoint, *net);
    if (meta)
        *meta = m;
    return net;
}

}  // namespace sanet::ckpt
