#include <benchmark/benchmark.h>

#include "fedossl/model.hpp"
#include "fedossl/objective.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace {

// Default benchmark shape: 16 input dims, 64/64 hidden, 16-dim features,
// 14 classes, batches of 64 unlabeled rows with labeled rows cycled in.
struct Workload {
    Model model;
    Matrix labeled_X{32, 16};
    std::vector<int> labeled_y;
    Matrix unlabeled_X{64, 16};
    Matrix centroids{14, 16};
    PseudoClassCounts counts{14, 0.9};
    ObjectiveOptions opt;

    Workload() {
        Rng r(5);
        model = init_model({16, 64, 64, 16}, 14, r);
        for (size_t i = 0; i < labeled_X.size(); ++i) labeled_X.data()[i] = r.normal();
        for (size_t i = 0; i < unlabeled_X.size(); ++i) unlabeled_X.data()[i] = r.normal();
        for (size_t i = 0; i < centroids.size(); ++i) centroids.data()[i] = r.normal();
        for (int i = 0; i < 32; ++i)
            labeled_y.push_back(static_cast<int>(r.uniform_int(8)));
        counts = update_pseudo_counts(counts, forward(model, unlabeled_X).logits);
    }
};

const Workload& workload() {
    static const Workload w;
    return w;
}

void BM_forward(benchmark::State& state) {
    const Workload& w = workload();
    for (auto _ : state) {
        ForwardResult f = forward(w.model, w.unlabeled_X);
        benchmark::DoNotOptimize(f.logits.data());
    }
}
BENCHMARK(BM_forward);

void BM_build_pairs(benchmark::State& state) {
    const Workload& w = workload();
    const Matrix feats = forward(w.model, w.unlabeled_X).features;
    for (auto _ : state) {
        Rng pr(9);
        PairAssignment pa = build_pairs(feats, {}, pr);
        benchmark::DoNotOptimize(pa.partner.data());
    }
}
BENCHMARK(BM_build_pairs);

// The full composite loss with gradient — the inner loop of every local
// training epoch.
void BM_total_objective(benchmark::State& state) {
    const Workload& w = workload();
    for (auto _ : state) {
        Rng pr(9);
        ObjectiveResult res = total_objective(w.model, w.labeled_X, w.labeled_y,
                                              w.unlabeled_X, w.counts, &w.centroids, w.opt, pr);
        benchmark::DoNotOptimize(res.total);
    }
}
BENCHMARK(BM_total_objective);

} // namespace
