#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "mce/coalition.hpp"

namespace {

mce::CoalitionGame table_game(int players, uint64_t seed) {
    auto table = std::make_shared<std::vector<double>>(1ull << players);
    mce::Rng rng(seed);
    for (double& v : *table) v = rng.uniform();
    (*table)[0] = 0.0;
    mce::CoalitionGame g;
    g.players = players;
    g.empty_value = 0.0;
    g.value = [table](uint64_t s) { return (*table)[s]; };
    return g;
}

void BM_ExactShapley(benchmark::State& state) {
    const int players = static_cast<int>(state.range(0));
    mce::CoalitionGame g = table_game(players, 7);
    const uint64_t full = (1ull << players) - 1;
    for (auto _ : state) {
        auto res = mce::exact_shapley(g, full);
        benchmark::DoNotOptimize(res.phi.data());
    }
}
BENCHMARK(BM_ExactShapley)->DenseRange(3, 12, 3);

void BM_MonteCarloShapley(benchmark::State& state) {
    const int players = static_cast<int>(state.range(0));
    mce::CoalitionGame g = table_game(players, 7);
    const uint64_t full = (1ull << players) - 1;
    uint64_t seed = 0;
    for (auto _ : state) {
        auto res = mce::mc_shapley(g, full, 100, seed++);
        benchmark::DoNotOptimize(res.phi.data());
    }
}
BENCHMARK(BM_MonteCarloShapley)->DenseRange(3, 12, 3);

void BM_EnumerateSubsets(benchmark::State& state) {
    const uint64_t mask = (1ull << state.range(0)) - 1;
    for (auto _ : state) {
        auto subsets = mce::enumerate_subsets(mask);
        benchmark::DoNotOptimize(subsets.data());
    }
}
BENCHMARK(BM_EnumerateSubsets)->DenseRange(4, 16, 4);

}  // namespace

BENCHMARK_MAIN();
