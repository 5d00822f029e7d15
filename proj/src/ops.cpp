#include "sanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace sanet::nn {
namespace {

template <typename T>
Tensor<T>* grad_of(const std::shared_ptr<Node<T>>& n)
{
    return n->requires_grad ? &n->grad_buffer() : nullptr;
}

template <typename T>
std::vector<Var<T>> with_optional(std::vector<Var<T>> xs, const Var<T>& maybe)
{
    if (maybe.defined())
        xs.push_back(maybe);
    return xs;
}

template <typename T>
void require_vector(const Var<T>& v, std::int64_t n, const char* what)
{
    if (v.shape() != vector_shape(n))
        throw ShapeError(std::string(what) + " expects a vector of length " + std::to_string(n) + ", got " +
                         v.shape().str());
}

template <typename T>
void add_bias_grad(const Tensor<T>& grad_out, Tensor<T>& grad_bias)
{
    const Shape s = grad_out.shape();
    for (std::int64_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (const T v : grad_out.channel(c))
            acc += v;
        grad_bias[static_cast<std::size_t>(c)] += static_cast<T>(acc);
    }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g)
{
    const Shape ws = weight.shape();
    if (ws.d != x.shape().c)
        throw ShapeError("conv3d: weight expects " + std::to_string(ws.d) + " input channels, got " +
                         x.shape().str());
    if (bias.defined())
        require_vector(bias, ws.c, "conv3d bias");
    Tensor<T> out(g.out_shape(x.shape(), ws.c));
    std::span<const T> b = bias.defined() ? bias.value().values() : std::span<const T>{};
    kernels::conv3d_forward(x.value(), weight.value(), b, g, out);
    return make_result<T>(std::move(out), with_optional<T>({x, weight}, bias), [g](Node<T>& self) {
        const auto& xn = self.parents[0];
        const auto& wn = self.parents[1];
        if (auto* gx = grad_of(xn))
            kernels::conv3d_backward_input(self.grad, wn->value, g, *gx);
        if (auto* gw = grad_of(wn))
            kernels::conv3d_backward_weight(self.grad, xn->value, g, *gw);
        if (self.parents.size() > 2)
            if (auto* gb = grad_of(self.parents[2]))
                add_bias_grad(self.grad, *gb);
    });
}

// A transposed convolution is the input-gradient of the matching forward
// convolution, so it reuses the conv kernels with the roles swapped.
template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride)
{
    const Shape ws = weight.shape();
    if (ws.c != x.shape().c)
        throw ShapeError("conv_transpose3d: weight expects " + std::to_string(ws.c) + " input channels, got " +
                         x.shape().str());
    const ConvGeometry g{stride, stride, 0};
    if (ws != kernels::conv_weight_shape(ws.c, ws.d, stride))
        throw ShapeError("conv_transpose3d: kernel must equal stride");
    const Shape xs = x.shape();
    Tensor<T> out({ws.d, xs.d * stride, xs.h * stride, xs.w * stride});
    kernels::conv3d_backward_input(x.value(), weight.value(), g, out);
    if (bias.defined()) {
        require_vector(bias, ws.d, "conv_transpose3d bias");
        for (std::int64_t c = 0; c < ws.d; ++c)
            for (T& v : out.channel(c))
                v += bias.value()[static_cast<std::size_t>(c)];
    }
    return make_result<T>(std::move(out), with_optional<T>({x, weight}, bias), [g](Node<T>& self) {
        const auto& xn = self.parents[0];
        const auto& wn = self.parents[1];
        if (auto* gx = grad_of(xn)) {
            Tensor<T> tmp(xn->value.shape());
            kernels::conv3d_forward(self.grad, wn->value, {}, g, tmp);
            for (std::size_t i = 0; i < tmp.size(); ++i)
                (*gx)[i] += tmp[i];
        }
        if (auto* gw = grad_of(wn))
            kernels::conv3d_backward_weight(xn->value, self.grad, g, *gw);
        if (self.parents.size() > 2)
            if (auto* gb = grad_of(self.parents[2]))
                add_bias_grad(self.grad, *gb);
    });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps)
{
    const std::int64_t c = x.shape().c;
    require_vector(gamma, c, "instance_norm gamma");
    require_vector(beta, c, "instance_norm beta");
    Tensor<T> out(x.shape());
    auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(2 * c));
    std::span<T> mean(stats->data(), static_cast<std::size_t>(c));
    std::span<T> inv_std(stats->data() + c, static_cast<std::size_t>(c));
    kernels::instance_norm_forward(x.value(), gamma.value().values(), beta.value().values(), eps, out, mean,
                                   inv_std);
    return make_result<T>(std::move(out), {x, gamma, beta}, [stats, c](Node<T>& self) {
        const auto& xn = self.parents[0];
        const auto& gn = self.parents[1];
        const auto& bn = self.parents[2];
        Tensor<T> gx_local;
        Tensor<T>* gx = grad_of(xn);
        if (!gx) {
            gx_local = Tensor<T>(xn->value.shape());
            gx = &gx_local;
        }
        std::vector<T> dgamma(static_cast<std::size_t>(c)), dbeta(static_cast<std::size_t>(c));
        std::span<const T> mean(stats->data(), static_cast<std::size_t>(c));
        std::span<const T> inv_std(stats->data() + c, static_cast<std::size_t>(c));
        kernels::instance_norm_backward<T>(self.grad, xn->value, std::as_const(gn->value).values(), mean, inv_std, *gx,
                                        std::span<T>(dgamma), std::span<T>(dbeta));
        if (auto* gg = grad_of(gn))
            for (std::size_t i = 0; i < dgamma.size(); ++i)
                (*gg)[i] += dgamma[i];
        if (auto* gb = grad_of(bn))
            for (std::size_t i = 0; i < dbeta.size(); ++i)
                (*gb)[i] += dbeta[i];
    });
}

template <typename T>
Var<T> relu(const Var<T>& x)
{
    Tensor<T> out(x.shape());
    const T* in = x.value().data();
    T* o = out.data();
    const std::size_t n = out.size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i)
        o[i] = in[i] > T{0} ? in[i] : T{0};
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        const std::size_t n = self.value.size();
        for (std::size_t i = 0; i < n; ++i)
            if (self.value[i] > T{0})
                (*gx)[i] += self.grad[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x)
{
    Tensor<T> out(x.shape());
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = T{1} / (T{1} + std::exp(-x.value()[i]));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const T s = self.value[i];
            (*gx)[i] += self.grad[i] * s * (T{1} - s);
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    return add_n<T>({a, b});
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs)
{
    if (xs.empty())
        throw ShapeError("add_n of no tensors");
    Tensor<T> out = xs.front().value();
    for (std::size_t k = 1; k < xs.size(); ++k) {
        if (xs[k].shape() != out.shape())
            throw ShapeError("add: shapes " + out.shape().str() + " and " + xs[k].shape().str() + " differ");
        const T* src = xs[k].value().data();
        T* dst = out.data();
        for (std::size_t i = 0; i < out.size(); ++i)
            dst[i] += src[i];
    }
    return make_result<T>(std::move(out), xs, [](Node<T>& self) {
        for (const auto& p : self.parents)
            if (auto* g = grad_of(p))
                for (std::size_t i = 0; i < g->size(); ++i)
                    (*g)[i] += self.grad[i];
    });
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs)
{
    Var<T> sum = add_n(xs);
    const T inv = T{1} / static_cast<T>(xs.size());
    Tensor<T> out = sum.value();
    for (T& v : out.values())
        v *= inv;
    return make_result<T>(std::move(out), {sum}, [inv](Node<T>& self) {
        auto* g = grad_of(self.parents[0]);
        for (std::size_t i = 0; i < g->size(); ++i)
            (*g)[i] += self.grad[i] * inv;
    });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& gate)
{
    const Shape s = x.shape();
    require_vector(gate, s.c, "scale_channels gate");
    Tensor<T> out(s);
    for (std::int64_t c = 0; c < s.c; ++c) {
        const T gv = gate.value()[static_cast<std::size_t>(c)];
        auto src = x.value().channel(c);
        auto dst = out.channel(c);
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i] = src[i] * gv;
    }
    return make_result<T>(std::move(out), {x, gate}, [](Node<T>& self) {
        const auto& xn = self.parents[0];
        const auto& gn = self.parents[1];
        auto* gx = grad_of(xn);
        auto* gg = grad_of(gn);
        for (std::int64_t c = 0; c < self.value.shape().c; ++c) {
            auto dy = self.grad.channel(c);
            if (gx) {
                const T gv = gn->value[static_cast<std::size_t>(c)];
                auto dx = gx->channel(c);
                for (std::size_t i = 0; i < dy.size(); ++i)
                    dx[i] += dy[i] * gv;
            }
            if (gg) {
                auto xv = xn->value.channel(c);
                double acc = 0.0;
                for (std::size_t i = 0; i < dy.size(); ++i)
                    acc += static_cast<double>(dy[i]) * xv[i];
                (*gg)[static_cast<std::size_t>(c)] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x)
{
    const Shape s = x.shape();
    Tensor<T> out(vector_shape(s.c));
    for (std::int64_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (const T v : x.value().channel(c))
            acc += v;
        out[static_cast<std::size_t>(c)] = static_cast<T>(acc / static_cast<double>(s.spatial()));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        const Shape s = gx->shape();
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T g = self.grad[static_cast<std::size_t>(c)] / static_cast<T>(s.spatial());
            for (T& v : gx->channel(c))
                v += g;
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias)
{
    const Shape ws = weight.shape();
    require_vector(x, ws.d, "linear input");
    if (bias.defined())
        require_vector(bias, ws.c, "linear bias");
    Tensor<T> out(vector_shape(ws.c));
    for (std::int64_t o = 0; o < ws.c; ++o) {
        double acc = bias.defined() ? static_cast<double>(bias.value()[static_cast<std::size_t>(o)]) : 0.0;
        for (std::int64_t i = 0; i < ws.d; ++i)
            acc += static_cast<double>(weight.value()[static_cast<std::size_t>(o * ws.d + i)]) *
                   x.value()[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = static_cast<T>(acc);
    }
    return make_result<T>(std::move(out), with_optional<T>({x, weight}, bias), [](Node<T>& self) {
        const auto& xn = self.parents[0];
        const auto& wn = self.parents[1];
        const std::int64_t n_out = wn->value.shape().c, n_in = wn->value.shape().d;
        auto* gx = grad_of(xn);
        auto* gw = grad_of(wn);
        for (std::int64_t o = 0; o < n_out; ++o) {
            const T g = self.grad[static_cast<std::size_t>(o)];
            for (std::int64_t i = 0; i < n_in; ++i) {
                const auto wi = static_cast<std::size_t>(o * n_in + i);
                if (gx)
                    (*gx)[static_cast<std::size_t>(i)] += g * wn->value[wi];
                if (gw)
                    (*gw)[wi] += g * xn->value[static_cast<std::size_t>(i)];
            }
        }
        if (self.parents.size() > 2)
            if (auto* gb = grad_of(self.parents[2]))
                for (std::int64_t o = 0; o < n_out; ++o)
                    (*gb)[static_cast<std::size_t>(o)] += self.grad[static_cast<std::size_t>(o)];
    });
}

template <typename T>
Var<T> maxpool3d(const Var<T>& x, int factor)
{
    const Shape s = x.shape();
    Tensor<T> out({s.c, s.d / factor, s.h / factor, s.w / factor});
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    kernels::maxpool3d_forward(x.value(), factor, out, *argmax);
    return make_result<T>(std::move(out), {x}, [argmax](Node<T>& self) {
        kernels::maxpool3d_backward(self.grad, std::span<const std::int64_t>(*argmax),
                                    *grad_of(self.parents[0]));
    });
}

template <typename T>
Var<T> upsample_trilinear(const Var<T>& x, int factor)
{
    if (factor == 1)
        return x;
    const Shape s = x.shape();
    Tensor<T> out({s.c, s.d * factor, s.h * factor, s.w * factor});
    kernels::upsample_trilinear_forward(x.value(), factor, out);
    return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
        kernels::upsample_trilinear_backward(self.grad, factor, *grad_of(self.parents[0]));
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b)
{
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.with_channels(1) != sb.with_channels(1))
        throw ShapeError("concat: spatial extents " + sa.str() + " and " + sb.str() + " differ");
    Tensor<T> out(sa.with_channels(sa.c + sb.c));
    std::copy(a.value().values().begin(), a.value().values().end(), out.data());
    std::copy(b.value().values().begin(), b.value().values().end(), out.data() + a.value().size());
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        std::size_t offset = 0;
        for (const auto& p : self.parents) {
            const std::size_t n = p->value.size();
            if (auto* g = grad_of(p))
                for (std::size_t i = 0; i < n; ++i)
                    (*g)[i] += self.grad[offset + i];
            offset += n;
        }
    });
}

template <typename T>
Var<T> stack_vectors(const std::vector<Var<T>>& xs)
{
    if (xs.empty())
        throw ShapeError("stack of no vectors");
    const std::int64_t c = xs.front().shape().c;
    Tensor<T> out({static_cast<std::int64_t>(xs.size()), c, 1, 1});
    for (std::size_t k = 0; k < xs.size(); ++k) {
        require_vector(xs[k], c, "stack_vectors");
        std::copy(xs[k].value().values().begin(), xs[k].value().values().end(), out.data() + k * c);
    }
    return make_result<T>(std::move(out), xs, [c](Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k)
            if (auto* g = grad_of(self.parents[k]))
                for (std::int64_t i = 0; i < c; ++i)
                    (*g)[static_cast<std::size_t>(i)] += self.grad[k * c + i];
    });
}

template <typename T>
Var<T> softmax_leading(const Var<T>& x)
{
    const Shape s = x.shape();
    if (s.h != 1 || s.w != 1)
        throw ShapeError("softmax_leading expects (N, C, 1, 1), got " + s.str());
    const std::int64_t n = s.c, c = s.d;
    Tensor<T> out(s);
    for (std::int64_t j = 0; j < c; ++j) {
        T mx = x.value()[j];
        for (std::int64_t e = 1; e < n; ++e)
            mx = std::max(mx, x.value()[e * c + j]);
        T sum = 0;
        for (std::int64_t e = 0; e < n; ++e)
            sum += out[e * c + j] = std::exp(x.value()[e * c + j] - mx);
        for (std::int64_t e = 0; e < n; ++e)
            out[e * c + j] /= sum;
    }
    return make_result<T>(std::move(out), {x}, [n, c](Node<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        for (std::int64_t j = 0; j < c; ++j) {
            T dot = 0;
            for (std::int64_t e = 0; e < n; ++e)
                dot += self.grad[e * c + j] * self.value[e * c + j];
            for (std::int64_t e = 0; e < n; ++e)
                (*gx)[e * c + j] += self.value[e * c + j] * (self.grad[e * c + j] - dot);
        }
    });
}

template <typename T>
Var<T> select_row(const Var<T>& x, std::int64_t index)
{
    const Shape s = x.shape();
    if (index < 0 || index >= s.c || s.h != 1 || s.w != 1)
        throw ShapeError("select_row " + std::to_string(index) + " out of " + s.str());
    Tensor<T> out(vector_shape(s.d));
    std::copy(x.value().data() + index * s.d, x.value().data() + (index + 1) * s.d, out.data());
    return make_result<T>(std::move(out), {x}, [index](Node<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        const std::size_t c = self.value.size();
        for (std::size_t i = 0; i < c; ++i)
            (*gx)[index * c + i] += self.grad[i];
    });
}

#define SANET_INSTANTIATE_OPS(T)                                                                               \
    template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);                        \
    template Var<T> conv_transpose3d(const Var<T>&, const Var<T>&, const Var<T>&, int);                       \
    template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                            \
    template Var<T> relu(const Var<T>&);                                                                       \
    template Var<T> sigmoid(const Var<T>&);                                                                    \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> add_n(const std::vector<Var<T>>&);                                                         \
    template Var<T> mean_of(const std::vector<Var<T>>&);                                                       \
    template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                              \
    template Var<T> global_avg_pool(const Var<T>&);                                                            \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                       \
    template Var<T> maxpool3d(const Var<T>&, int);                                                             \
    template Var<T> upsample_trilinear(const Var<T>&, int);                                                    \
    template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                             \
    template Var<T> stack_vectors(const std::vector<Var<T>>&);                                                 \
    template Var<T> softmax_leading(const Var<T>&);                                                            \
    template Var<T> select_row(const Var<T>&, std::int64_t);

SANET_INSTANTIATE_OPS(float)
SANET_INSTANTIATE_OPS(double)

}  // namespace sanet::nn
