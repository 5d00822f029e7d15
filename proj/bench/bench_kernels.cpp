// Parallel kernels against the serial reference kernels on typical layer sizes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sanet/kernels.hpp"

namespace {

using namespace sanet;
using kernels::ConvGeometry;

Tensor<float> filled(Shape s, unsigned seed)
{
    Tensor<float> t(s);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& v : t.values())
        v = u(rng);
    return t;
}

// args: channels, spatial side
template <bool Reference>
void conv_forward(benchmark::State& state)
{
    const auto c = state.range(0), n = state.range(1);
    const ConvGeometry g;
    const auto in = filled({c, n, n, n}, 1);
    const auto w = filled(kernels::conv_weight_shape(c, c, 3), 2);
    const std::vector<float> bias(static_cast<std::size_t>(c), 0.1f);
    Tensor<float> out(g.out_shape(in.shape(), c));
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::conv3d_forward<float>(in, w, bias, g, out);
        else
            kernels::conv3d_forward<float>(in, w, bias, g, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * c * c * 27 * n * n * n);
}

template <bool Reference>
void conv_backward_weight(benchmark::State& state)
{
    const auto c = state.range(0), n = state.range(1);
    const ConvGeometry g;
    const auto in = filled({c, n, n, n}, 1);
    const auto gout = filled({c, n, n, n}, 3);
    Tensor<float> gw(kernels::conv_weight_shape(c, c, 3));
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::conv3d_backward_weight<float>(gout, in, g, gw);
        else
            kernels::conv3d_backward_weight<float>(gout, in, g, gw);
        benchmark::DoNotOptimize(gw.values().data());
    }
    state.SetItemsProcessed(state.iterations() * c * c * 27 * n * n * n);
}

template <bool Reference>
void upsample(benchmark::State& state)
{
    const auto c = state.range(0), n = state.range(1);
    const auto in = filled({c, n, n, n}, 1);
    Tensor<float> out({c, 2 * n, 2 * n, 2 * n});
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::upsample_trilinear_forward<float>(in, 2, out);
        else
            kernels::upsample_trilinear_forward<float>(in, 2, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size()));
}

template <bool Reference>
void instance_norm(benchmark::State& state)
{
    const auto c = state.range(0), n = state.range(1);
    const auto in = filled({c, n, n, n}, 1);
    Tensor<float> out(in.shape());
    const std::vector<float> gamma(static_cast<std::size_t>(c), 1.0f), beta(static_cast<std::size_t>(c), 0.0f);
    std::vector<float> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    for (auto _ : state) {
        if constexpr (Reference)
            kernels::reference::instance_norm_forward<float>(in, gamma, beta, 1e-5f, out, mean, inv_std);
        else
            kernels::instance_norm_forward<float>(in, gamma, beta, 1e-5f, out, mean, inv_std);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.size()));
}

void sizes(benchmark::internal::Benchmark* b)
{
    b->Args({16, 32})->Args({32, 16})->Args({64, 8})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<false>)->Name("conv_forward/parallel")->Apply(sizes);
BENCHMARK(conv_forward<true>)->Name("conv_forward/reference")->Apply(sizes);
BENCHMARK(conv_backward_weight<false>)->Name("conv_backward_weight/parallel")->Apply(sizes);
BENCHMARK(conv_backward_weight<true>)->Name("conv_backward_weight/reference")->Apply(sizes);
BENCHMARK(upsample<false>)->Name("upsample/parallel")->Apply(sizes);
BENCHMARK(upsample<true>)->Name("upsample/reference")->Apply(sizes);
BENCHMARK(instance_norm<false>)->Name("instance_norm/parallel")->Apply(sizes);
BENCHMARK(instance_norm<true>)->Name("instance_norm/reference")->Apply(sizes);

BENCHMARK_MAIN();
