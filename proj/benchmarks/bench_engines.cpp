#include "ffebm/gradients.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ffebm;

namespace {

struct Problem {
    Model model;
    Tensor x;
    Labels y;
    EngineSettings settings;
};

// Six fully connected layers of width 64 on MNIST-sized inputs.
Problem mnist_like(std::vector<std::size_t> split) {
    ModelConfig c;
    c.input_shape = {784};
    c.num_classes = 10;
    c.seed = 1;
    c.blocks = chain_blocks({64, 64, 64, 64, 64, 64}, std::move(split));
    c.init.bias = 0.5;
    Problem p{build_model(c), Tensor({16, 784}), Labels(16), {}};
    Rng rng(2);
    std::normal_distribution<Scalar> nd;
    for (auto& v : p.x.data()) v = nd(rng);
    for (std::size_t b = 0; b < 16; ++b) p.y[b] = b % 10;
    p.settings.t_free = 20;
    p.settings.t_nudge = 6;
    p.settings.residual_tolerance = 1e9;
    return p;
}

std::vector<std::size_t> split_arg(std::int64_t blocks) {
    return std::vector<std::size_t>(static_cast<std::size_t>(blocks), 6 / static_cast<std::size_t>(blocks));
}

void BM_FreePhase(benchmark::State& state) {
    const Problem p = mnist_like(split_arg(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(forward_inference(p.model, p.x, Mode::eval, p.settings.free_phase()));
}
BENCHMARK(BM_FreePhase)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_Engine(benchmark::State& state, Engine engine) {
    Problem p = mnist_like(split_arg(state.range(0)));
    p.settings.engine = engine;
    const InferenceRecord rec = forward_inference(p.model, p.x, Mode::eval, p.settings.free_phase());
    for (auto _ : state) {
        switch (engine) {
            case Engine::ep_explicit:
                benchmark::DoNotOptimize(ep_gradients_explicit(p.model, rec, p.y, p.settings));
                break;
            case Engine::id:
                benchmark::DoNotOptimize(id_gradients(p.model, rec, p.y, p.settings));
                break;
            default:
                benchmark::DoNotOptimize(ep_gradients_implicit(p.model, rec, p.y, p.settings));
        }
    }
}
BENCHMARK_CAPTURE(BM_Engine, ep_implicit, Engine::ep_implicit)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Engine, ep_explicit, Engine::ep_explicit)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Engine, id, Engine::id)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace
