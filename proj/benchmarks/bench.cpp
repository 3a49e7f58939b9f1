#include <benchmark/benchmark.h>

#include <random>

#include "hess/network.hpp"
#include "hess/ops.hpp"
#include "hess/synthetic.hpp"
#include "hess/voxel.hpp"

using namespace hess;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data));
}

void BM_Conv2d3x3(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
    std::mt19937_64 rng(1);
    const auto x = random_tensor(rng, {4, c, hw, hw});
    const auto w = random_tensor(rng, {c, c, 3, 3});
    const auto b = random_tensor(rng, {c});
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(4 * c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv2d3x3)->Args({16, 32})->Args({32, 16})->Args({64, 8});

void BM_Voxelize(benchmark::State& state) {
    SyntheticConfig cfg;
    const auto scene = gen_synthetic(3, cfg);
    const auto bins = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(voxelize(scene.events, bins, 0, cfg.duration_us));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(scene.events.events.size()));
}
BENCHMARK(BM_Voxelize)->Arg(1)->Arg(5)->Arg(8);

void BM_Forward(benchmark::State& state) {
    SyntheticConfig sc;
    const auto data = make_synthetic_dataset(5, sc, 4);
    NetworkConfig cfg;
    cfg.timesteps = cfg.bins = static_cast<std::size_t>(state.range(0));
    HybridNetwork net(cfg);
    const auto batch = make_batch(data, {0, 1, 2, 3}, cfg);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(batch));
    state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
