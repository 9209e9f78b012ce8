#include <benchmark/benchmark.h>

#include "fedossl/evaluation.hpp"
#include "fedossl/federation.hpp"
#include "fedossl/model.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace {

Model random_model(uint64_t seed) {
    Rng r(seed);
    return init_model({16, 64, 64, 16}, 14, r);
}

void BM_aggregate_models(benchmark::State& state) {
    std::vector<ModelUpload> uploads;
    for (int c = 0; c < 4; ++c) uploads.push_back({c, random_model(20 + c), 2100});
    for (auto _ : state) {
        Model m = aggregate_models(uploads);
        benchmark::DoNotOptimize(m.head.W.data());
    }
}
BENCHMARK(BM_aggregate_models);

void BM_confusion(benchmark::State& state) {
    const Model m = random_model(3);
    Rng r(4);
    TestSet test;
    test.X = Matrix(1680, 16);
    for (size_t i = 0; i < test.X.size(); ++i) test.X.data()[i] = r.normal();
    for (int i = 0; i < 1680; ++i)
        test.y.push_back(static_cast<int>(r.uniform_int(14)));
    for (auto _ : state) {
        ConfusionMatrix cm = confusion(m, test);
        benchmark::DoNotOptimize(cm.counts.data());
    }
}
BENCHMARK(BM_confusion);

// Matching plus the per-partition accuracy split on a dense 14x14 confusion.
void BM_metrics(benchmark::State& state) {
    Rng r(6);
    ConfusionMatrix cm;
    cm.counts = Matrix(14, 14);
    for (size_t i = 0; i < cm.counts.size(); ++i)
        cm.counts.data()[i] = std::floor(20.0 * r.uniform01());
    ClassTaxonomy tax;
    for (int c = 0; c < 8; ++c) tax.seen.push_back(c);
    tax.locally_unseen = {{8, 9}, {8, 9}, {9, 8}, {8, 9}};
    tax.globally_unseen = {{10}, {11}, {12}, {13}};
    for (auto _ : state) {
        MetricsReport rep = metrics(cm, tax);
        benchmark::DoNotOptimize(rep.acc_all);
    }
}
BENCHMARK(BM_metrics);

} // namespace

BENCHMARK_MAIN();
