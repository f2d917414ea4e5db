#include "ffebm/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ffebm;

namespace {

Tensor gaussian(const Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> nd;
    Tensor t(shape);
    for (auto& v : t.data()) v = nd(rng);
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = gaussian({n, n}, 1), b = gaussian({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulTransposed(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = gaussian({n, n}, 3), b = gaussian({n, n}, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul_nt(a, b));
        benchmark::DoNotOptimize(matmul_tn(a, b));
    }
}
BENCHMARK(BM_MatmulTransposed)->Arg(64)->Arg(256);

// Arguments: channels, spatial size.
void BM_Conv2d(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
    const Tensor x = gaussian({8, c, hw, hw}, 5), w = gaussian({c, c, 3, 3}, 6);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w));
}
BENCHMARK(BM_Conv2d)->Args({16, 32})->Args({64, 16});

void BM_Conv2dAdjoints(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
    const Tensor x = gaussian({8, c, hw, hw}, 7), w = gaussian({c, c, 3, 3}, 8);
    const Tensor g = gaussian(conv2d_output_shape(x.shape(), w.shape(), {}), 9);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d_input_adjoint(g, w, {}, x.shape()));
        benchmark::DoNotOptimize(conv2d_weight_adjoint(g, x, {}, w.shape()));
    }
}
BENCHMARK(BM_Conv2dAdjoints)->Args({16, 32})->Args({64, 16});

void BM_MaxPoolBatchNorm(benchmark::State& state) {
    const Tensor x = gaussian({16, 32, 16, 16}, 10);
    const Tensor scale({32}, 1.0), shift({32});
    const RunningStats running{Tensor({32}), Tensor({32}, 1.0)};
    for (auto _ : state) {
        const PoolResult p = maxpool2d(x);
        benchmark::DoNotOptimize(batchnorm_forward(p.values, scale, shift, BatchNormMode::train, running));
    }
}
BENCHMARK(BM_MaxPoolBatchNorm);

}  // namespace
