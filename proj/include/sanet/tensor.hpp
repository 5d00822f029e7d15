#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sanet/error.hpp"

namespace sanet {

/// Extent of a single-sample volumetric tensor: channels x depth x height x width,
/// width fastest in memory. Vectors are stored as (n, 1, 1, 1).
struct Shape {
    std::int64_t c = 1;
    std::int64_t d = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    [[nodiscard]] constexpr std::int64_t spatial() const { return d * h * w; }
    [[nodiscard]] constexpr std::int64_t numel() const { return c * d * h * w; }
    [[nodiscard]] constexpr Shape with_channels(std::int64_t ch) const { return {ch, d, h, w}; }
    [[nodiscard]] std::string str() const
    {
        return "(" + std::to_string(c) + "," + std::to_string(d) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline Shape vector_shape(std::int64_t n) { return {n, 1, 1, 1}; }

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{})
        : shape_(shape), data_(static_cast<std::size_t>(check(shape).numel()), fill)
    {
    }
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data))
    {
        if (static_cast<std::int64_t>(data_.size()) != check(shape).numel())
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape.str());
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    std::span<T> channel(std::int64_t c)
    {
        return {data_.data() + c * shape_.spatial(), static_cast<std::size_t>(shape_.spatial())};
    }
    std::span<const T> channel(std::int64_t c) const
    {
        return {data_.data() + c * shape_.spatial(), static_cast<std::size_t>(shape_.spatial())};
    }

    [[nodiscard]] std::size_t index(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const
    {
        return static_cast<std::size_t>(((c * shape_.d + z) * shape_.h + y) * shape_.w + x);
    }
    T& operator()(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) { return data_[index(c, z, y, x)]; }
    const T& operator()(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const
    {
        return data_[index(c, z, y, x)];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same data under a new shape with identical element count.
    [[nodiscard]] Tensor reshaped(Shape shape) const { return Tensor(shape, data_); }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const
    {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static const Shape& check(const Shape& s)
    {
        if (s.c < 0 || s.d < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative extent in shape " + s.str());
        return s;
    }

    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Axis-aligned half-open box [lo, hi) in (z, y, x) voxel coordinates.
struct Box {
    std::array<std::int64_t, 3> lo{0, 0, 0};
    std::array<std::int64_t, 3> hi{0, 0, 0};

    [[nodiscard]] std::int64_t extent(int axis) const { return hi[axis] - lo[axis]; }
    friend bool operator==(const Box&, const Box&) = default;
};

/// Copy the (C, size^3) block at `origin` out of `src`.
template <typename T>
Tensor<T> crop(const Tensor<T>& src, std::array<std::int64_t, 3> origin, std::array<std::int64_t, 3> size)
{
    const Shape& s = src.shape();
    for (int a = 0; a < 3; ++a) {
        const std::int64_t dim = a == 0 ? s.d : (a == 1 ? s.h : s.w);
        if (origin[a] < 0 || size[a] < 0 || origin[a] + size[a] > dim)
            throw ShapeError("crop window exceeds tensor " + s.str());
    }
    Tensor<T> out({s.c, size[0], size[1], size[2]});
    for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t z = 0; z < size[0]; ++z)
            for (std::int64_t y = 0; y < size[1]; ++y) {
                const T* from = &src(c, origin[0] + z, origin[1] + y, origin[2]);
                std::copy(from, from + size[2], &out(c, z, y, 0));
            }
    return out;
}

}  // namespace sanet
