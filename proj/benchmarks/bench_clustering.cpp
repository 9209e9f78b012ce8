#include <benchmark/benchmark.h>

#include "fedossl/clustering.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace {

Matrix random_points(int n, int d, uint64_t seed) {
    Rng r(seed);
    Matrix m(n, d);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
    return m;
}

void BM_sinkhorn_plan(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int L = static_cast<int>(state.range(1));
    Rng r(7);
    Matrix cost(n, L);
    for (size_t i = 0; i < cost.size(); ++i) cost.data()[i] = r.uniform01();
    for (auto _ : state) {
        TransportPlan tp = sinkhorn_plan(cost, 0.05, 500, 1e-6);
        benchmark::DoNotOptimize(tp.plan.data());
    }
}
BENCHMARK(BM_sinkhorn_plan)->Args({64, 8})->Args({256, 14})->Args({600, 32});

// One client's per-round clustering workload at the default benchmark shape:
// every shard row embedded to 16 dims, 32 balanced local centroids.
void BM_balanced_cluster_shard(benchmark::State& state) {
    const Matrix pts = random_points(static_cast<int>(state.range(0)), 16, 11);
    for (auto _ : state) {
        ClusterResult res = balanced_cluster(pts, 32);
        benchmark::DoNotOptimize(res.centroids.centroids.data());
    }
}
BENCHMARK(BM_balanced_cluster_shard)->Arg(600)->Arg(1800);

// The server's side: re-cluster 4 uploads x 32 local centroids into 14
// globals, aligned to the previous round's set.
void BM_aggregate_global_centroids(benchmark::State& state) {
    std::vector<CentroidSet> uploads;
    for (int c = 0; c < 4; ++c) {
        CentroidSet s;
        s.centroids = random_points(32, 16, 100 + static_cast<uint64_t>(c));
        s.client_id = c;
        uploads.push_back(std::move(s));
    }
    const CentroidSet prev = aggregate_global_centroids(uploads, 14);
    for (auto _ : state) {
        CentroidSet g = aggregate_global_centroids(uploads, 14, {}, &prev);
        benchmark::DoNotOptimize(g.centroids.data());
    }
}
BENCHMARK(BM_aggregate_global_centroids);

} // namespace
