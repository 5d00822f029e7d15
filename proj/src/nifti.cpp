#include "sanet/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>

namespace sanet::io {
namespace {

constexpr std::size_t header_size = 348;
constexpr std::size_t voxel_offset = 352;

struct GzCloser {
    void operator()(gzFile f) const
    {
        if (f)
            gzclose(f);
    }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

GzHandle open(const std::filesystem::path& path, const char* mode)
{
    GzHandle f(gzopen(path.c_str(), mode));
    if (!f)
        throw IoError("cannot open " + path.string());
    return f;
}

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path)
{
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
        const int got = gzread(f, out, chunk);
        if (got <= 0)
            throw IoError("truncated NIfTI file " + path.string());
        out += got;
        n -= static_cast<std::size_t>(got);
    }
}

void write_exact(gzFile f, const void* src, std::size_t n, const std::filesystem::path& path)
{
    const auto* in = static_cast<const unsigned char*>(src);
    while (n > 0) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
        const int put = gzwrite(f, in, chunk);
        if (put <= 0)
            throw IoError("write failed for " + path.string());
        in += put;
        n -= static_cast<std::size_t>(put);
    }
}

void byteswap(unsigned char* p, std::size_t width)
{
    std::reverse(p, p + width);
}

// Header field access with optional byte swapping.
class Header {
public:
    explicit Header(bool swap) : swap_(swap) {}
    unsigned char* bytes() { return buf_.data(); }

    template <typename V>
    V get(std::size_t offset) const
    {
        std::array<unsigned char, sizeof(V)> tmp;
        std::memcpy(tmp.data(), buf_.data() + offset, sizeof(V));
        if (swap_)
            byteswap(tmp.data(), sizeof(V));
        V v;
        std::memcpy(&v, tmp.data(), sizeof(V));
        return v;
    }
    template <typename V>
    void put(std::size_t offset, V v)
    {
        std::memcpy(buf_.data() + offset, &v, sizeof(V));
    }
    void set_swap(bool s) { swap_ = s; }

private:
    std::array<unsigned char, header_size> buf_{};
    bool swap_;
};

std::size_t type_width(std::int16_t type)
{
    switch (static_cast<NiftiType>(type)) {
    case NiftiType::uint8:
    case NiftiType::int8:
        return 1;
    case NiftiType::int16:
    case NiftiType::uint16:
        return 2;
    case NiftiType::int32:
    case NiftiType::uint32:
    case NiftiType::float32:
        return 4;
    case NiftiType::float64:
        return 8;
    }
    throw IoError("unsupported NIfTI datatype " + std::to_string(type));
}

template <typename V>
double load_as(const unsigned char* p, bool swap)
{
    std::array<unsigned char, sizeof(V)> tmp;
    std::memcpy(tmp.data(), p, sizeof(V));
    if (swap)
        byteswap(tmp.data(), sizeof(V));
    V v;
    std::memcpy(&v, tmp.data(), sizeof(V));
    return static_cast<double>(v);
}

double decode(const unsigned char* p, std::int16_t type, bool swap)
{
    switch (static_cast<NiftiType>(type)) {
    case NiftiType::uint8: return load_as<std::uint8_t>(p, swap);
    case NiftiType::int8: return load_as<std::int8_t>(p, swap);
    case NiftiType::int16: return load_as<std::int16_t>(p, swap);
    case NiftiType::uint16: return load_as<std::uint16_t>(p, swap);
    case NiftiType::int32: return load_as<std::int32_t>(p, swap);
    case NiftiType::uint32: return load_as<std::uint32_t>(p, swap);
    case NiftiType::float32: return load_as<float>(p, swap);
    case NiftiType::float64: return load_as<double>(p, swap);
    }
    return 0.0;
}

template <typename V>
void store_as(unsigned char* p, double v)
{
    V out;
    if constexpr (std::is_integral_v<V>) {
        const double lo = static_cast<double>(std::numeric_limits<V>::min());
        const double hi = static_cast<double>(std::numeric_limits<V>::max());
        out = static_cast<V>(std::clamp(std::round(v), lo, hi));
    } else {
        out = static_cast<V>(v);
    }
    std::memcpy(p, &out, sizeof(V));
}

void encode(unsigned char* p, NiftiType type, double v)
{
    switch (type) {
    case NiftiType::uint8: store_as<std::uint8_t>(p, v); break;
    case NiftiType::int8: store_as<std::int8_t>(p, v); break;
    case NiftiType::int16: store_as<std::int16_t>(p, v); break;
    case NiftiType::uint16: store_as<std::uint16_t>(p, v); break;
    case NiftiType::int32: store_as<std::int32_t>(p, v); break;
    case NiftiType::uint32: store_as<std::uint32_t>(p, v); break;
    case NiftiType::float32: store_as<float>(p, v); break;
    case NiftiType::float64: store_as<double>(p, v); break;
    }
}

bool ends_with_gz(const std::filesystem::path& p)
{
    const std::string s = p.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

}  // namespace

NiftiVolume read_nifti(const std::filesystem::path& path)
{
    static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");
    auto f = open(path, "rb");
    Header h(false);
    read_exact(f.get(), h.bytes(), header_size, path);
    bool swap = false;
    if (h.get<std::int32_t>(0) != static_cast<std::int32_t>(header_size)) {
        swap = true;
        h.set_swap(true);
        if (h.get<std::int32_t>(0) != static_cast<std::int32_t>(header_size))
            throw IoError(path.string() + " is not a NIfTI-1 file");
    }
    const auto ndim = h.get<std::int16_t>(40);
    if (ndim < 1 || ndim > 7)
        throw IoError(path.string() + ": invalid dimension count " + std::to_string(ndim));
    std::array<std::int64_t, 3> dims{1, 1, 1};
    for (int a = 0; a < 3 && a < ndim; ++a)
        dims[a] = h.get<std::int16_t>(42 + 2 * a);
    for (int a = 3; a < ndim; ++a)
        if (h.get<std::int16_t>(42 + 2 * a) > 1)
            throw IoError(path.string() + ": only 3D volumes are supported");
    for (auto d : dims)
        if (d < 1)
            throw IoError(path.string() + ": non-positive extent");
    const auto type = h.get<std::int16_t>(70);
    const std::size_t width = type_width(type);

    NiftiVolume vol;
    for (int a = 0; a < 3; ++a) {
        const float s = h.get<float>(80 + 4 * a);
        vol.spacing[a] = s > 0.0f && std::isfinite(s) ? static_cast<double>(s) : 1.0;
    }
    double slope = h.get<float>(112);
    const double inter = h.get<float>(116);
    if (slope == 0.0 || !std::isfinite(slope))
        slope = 1.0;

    const auto offset = static_cast<std::size_t>(std::max(h.get<float>(108), static_cast<float>(header_size)));
    std::vector<unsigned char> skip(offset - header_size);
    if (!skip.empty())
        read_exact(f.get(), skip.data(), skip.size(), path);

    const std::size_t n = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    std::vector<unsigned char> raw(n * width);
    read_exact(f.get(), raw.data(), raw.size(), path);

    // File order is x fastest; the tensor keeps z fastest.
    vol.data = Tensor<float>({1, dims[0], dims[1], dims[2]});
    for (std::int64_t z = 0; z < dims[2]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[0]; ++x) {
                const std::size_t i = static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
                vol.data(0, x, y, z) = static_cast<float>(decode(raw.data() + i * width, type, swap) * slope + inter);
            }
    return vol;
}

void write_nifti(const std::filesystem::path& path, const Tensor<float>& volume, std::array<double, 3> spacing,
                 NiftiType type)
{
    const Shape& s = volume.shape();
    if (s.c != 1)
        throw ShapeError("write_nifti expects a single-channel volume, got " + s.str());
    const std::array<std::int64_t, 3> dims{s.d, s.h, s.w};
    for (auto d : dims)
        if (d > 32767)
            throw IoError("extent too large for NIfTI-1: " + s.str());

    Header h(false);
    h.put<std::int32_t>(0, static_cast<std::int32_t>(header_size));
    h.put<std::int16_t>(40, 3);
    for (int a = 0; a < 3; ++a)
        h.put<std::int16_t>(42 + 2 * a, static_cast<std::int16_t>(dims[a]));
    for (int a = 3; a < 7; ++a)
        h.put<std::int16_t>(42 + 2 * a, 1);
    h.put<std::int16_t>(70, static_cast<std::int16_t>(type));
    h.put<std::int16_t>(72, static_cast<std::int16_t>(8 * type_width(static_cast<std::int16_t>(type))));
    h.put<float>(76, 1.0f);
    for (int a = 0; a < 3; ++a)
        h.put<float>(80 + 4 * a, static_cast<float>(spacing[a]));
    h.put<float>(108, static_cast<float>(voxel_offset));
    h.put<float>(112, 1.0f);
    h.put<float>(116, 0.0f);
    h.put<std::uint8_t>(123, 2);  // xyzt_units: millimetres
    h.put<std::int16_t>(254, 1);  // sform_code: scanner
    for (int a = 0; a < 3; ++a)
        h.put<float>(280 + 16 * a + 4 * a, static_cast<float>(spacing[a]));
    std::memcpy(h.bytes() + 344, "n+1\0", 4);

    auto f = open(path, ends_with_gz(path) ? "wb6" : "wbT");
    write_exact(f.get(), h.bytes(), header_size, path);
    const std::array<unsigned char, 4> extension{0, 0, 0, 0};
    write_exact(f.get(), extension.data(), extension.size(), path);

    const std::size_t width = type_width(static_cast<std::int16_t>(type));
    std::vector<unsigned char> raw(static_cast<std::size_t>(s.spatial()) * width);
    for (std::int64_t z = 0; z < dims[2]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[0]; ++x) {
                const std::size_t i = static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
                encode(raw.data() + i * width, type, static_cast<double>(volume(0, x, y, z)));
            }
    write_exact(f.get(), raw.data(), raw.size(), path);
}

}  // namespace sanet::io
