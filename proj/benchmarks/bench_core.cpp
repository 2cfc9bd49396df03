#include <benchmark/benchmark.h>

#include <filesystem>
#include <vector>

#include "backscan/detector.hpp"
#include "backscan/gmm.hpp"
#include "backscan/pca.hpp"
#include "backscan/rng.hpp"
#include "backscan/weightstore.hpp"

namespace {

using namespace backscan;

FeatureVectorSet gaussian_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    FeatureVectorSet set;
    set.dim = dim;
    set.vectors.assign(n, std::vector<double>(dim));
    for (auto& v : set.vectors) {
        for (std::size_t d = 0; d < dim; ++d) {
            v[d] = (1.0 + static_cast<double>(dim - d) / dim) * rng.normal();
        }
    }
    return set;
}

void BM_FitPca(benchmark::State& state) {
    const auto set = gaussian_set(1024, static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) {
        auto model = fit_pca(set, 0.95);
        benchmark::DoNotOptimize(model);
    }
}
BENCHMARK(BM_FitPca)->Arg(16)->Arg(64)->Arg(256);

void BM_FitGmm(benchmark::State& state) {
    const auto set = gaussian_set(1024, 16, 2);
    const auto k = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        auto model = fit_gmm(set, k, 7);
        benchmark::DoNotOptimize(model);
    }
}
BENCHMARK(BM_FitGmm)->Arg(1)->Arg(8)->Arg(32);

void BM_LogDensity(benchmark::State& state) {
    const auto set = gaussian_set(512, 16, 3);
    const auto model = fit_gmm(set, static_cast<std::size_t>(state.range(0)), 7);
    const auto probe = gaussian_set(1, 16, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(log_density(model, probe.vectors[0]));
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_LogDensity)->Arg(1)->Arg(16)->Arg(64);

void BM_SweepComponents(benchmark::State& state) {
    const auto set = gaussian_set(512, 8, 5);
    const std::vector<std::size_t> candidates = {1, 2, 5, 10, 20};
    for (auto _ : state) {
        auto sweep = sweep_components(set, candidates, 7);
        benchmark::DoNotOptimize(sweep);
    }
}
BENCHMARK(BM_SweepComponents);

void BM_ContainerRoundTrip(benchmark::State& state) {
    Rng rng(6);
    NetworkRecord rec;
    rec.network_id = "bench";
    WeightTensor t;
    t.name = "fc1";
    t.shape = {256, 64};
    t.data.resize(256 * 64);
    for (double& v : t.data) v = rng.normal();
    rec.tensors.push_back(std::move(t));
    const auto path = std::filesystem::temp_directory_path() / "backscan_bench.wsc";
    for (auto _ : state) {
        write_container(path, rec);
        auto loaded = read_container(path);
        benchmark::DoNotOptimize(loaded);
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_ContainerRoundTrip);

}  // namespace

BENCHMARK_MAIN();
