#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <vector>

#include "fedossl/config.hpp"
#include "fedossl/dataset.hpp"
#include "fedossl/error.hpp"
#include "fedossl/federation.hpp"
#include "fedossl/matrix.hpp"
#include "fedossl/model.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace fedossl {
struct EvalAccess {
    static EvalKey key() { return {}; }
};
} // namespace fedossl

namespace {

bool same_matrix(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(),
                       sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

bool same_model(const Model& a, const Model& b) {
    if (a.extractor.size() != b.extractor.size()) return false;
    for (size_t i = 0; i < a.extractor.size(); ++i)
        if (!same_matrix(a.extractor[i].W, b.extractor[i].W) ||
            !same_matrix(a.extractor[i].b, b.extractor[i].b))
            return false;
    return same_matrix(a.head.W, b.head.W) && same_matrix(a.head.b, b.head.b);
}

Model constant_model(const Model& shape, double value) {
    Model m = shape;
    for (Layer& l : m.extractor) {
        for (size_t i = 0; i < l.W.size(); ++i) l.W.data()[i] = value;
        for (size_t i = 0; i < l.b.size(); ++i) l.b.data()[i] = value;
    }
    for (size_t i = 0; i < m.head.W.size(); ++i) m.head.W.data()[i] = value;
    for (size_t i = 0; i < m.head.b.size(); ++i) m.head.b.data()[i] = value;
    return m;
}

// a small but fully structured benchmark: 4 seen, 2 exclusive, 1 shared class
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.data.classes = 7;
    cfg.data.dims = 4;
    cfg.data.per_class = 48;
    cfg.data.clients = 2;
    cfg.data.gu_per_client = 1;
    cfg.data.lu_per_client = 1;
    cfg.data.separation = 8.0;
    cfg.model.hidden = {8};
    cfg.model.feature_dim = 6;
    cfg.federation.rounds = 2;
    cfg.federation.local_epochs = 1;
    cfg.federation.batch_size = 16;
    // enough local centroids that a lone sampled client can still fill the
    // seven global ones
    cfg.clustering.local_centroids = 8;
    cfg.seed = 3;
    return cfg;
}

struct Bench {
    PartitionResult part;
    std::vector<ClientState> clients;
    ServerState server;
    FederationOptions opt;
};

Bench make_bench(const ExperimentConfig& cfg) {
    Bench b;
    Rng data_rng(derive_seed(cfg.seed, 0x11));
    const Dataset ds = generate_synthetic(cfg.data.classes, cfg.data.dims,
                                          cfg.data.per_class, cfg.data.separation,
                                          derive_seed(cfg.seed, 0x12));
    PartitionParams pp;
    pp.seen_fraction = cfg.data.seen_fraction;
    pp.labeled_fraction = cfg.data.labeled_fraction;
    pp.clients = cfg.data.clients;
    pp.gu_per_client = cfg.data.gu_per_client;
    pp.lu_per_client = cfg.data.lu_per_client;
    b.part = partition_open_world(ds, pp, derive_seed(cfg.seed, 0x21));

    b.opt = make_federation_options(cfg);
    Rng init_rng(derive_seed(cfg.seed, kSeedModelInit));
    std::vector<int> widths;
    widths.push_back(cfg.data.dims);
    for (int h : cfg.model.hidden) widths.push_back(h);
    widths.push_back(cfg.model.feature_dim);
    b.server.global_model = init_model(widths, cfg.data.classes, init_rng);
    for (const ClientShard& shard : b.part.shards) {
        ClientState st;
        st.client_id = shard.client_id;
        st.model = b.server.global_model;
        st.pseudo_counts = PseudoClassCounts(cfg.data.classes, cfg.objective.decay);
        st.shard = shard;
        b.clients.push_back(std::move(st));
    }
    return b;
}

} // namespace

TEST_CASE("client sampling returns a sorted subset of the right size") {
    const std::vector<int> all = sample_clients(5, 1.0, 7);
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4});

    const std::vector<int> half = sample_clients(4, 0.5, 7);
    CHECK(half.size() == 2);
    CHECK(std::is_sorted(half.begin(), half.end()));
    for (int id : half) {
        CHECK(id >= 0);
        CHECK(id < 4);
    }

    // ceil: 0.5 of 3 clients is 2
    CHECK(sample_clients(3, 0.5, 7).size() == 2);
    // tiny participation still trains someone
    CHECK(sample_clients(8, 0.01, 7).size() == 1);
}

TEST_CASE("client sampling is a function of the round seed") {
    const std::vector<int> a = sample_clients(10, 0.3, 42);
    const std::vector<int> b = sample_clients(10, 0.3, 42);
    CHECK(a == b);

    std::set<std::vector<int>> distinct;
    for (std::uint64_t s = 0; s < 30; ++s) distinct.insert(sample_clients(10, 0.3, s));
    CHECK(distinct.size() > 1);
}

TEST_CASE("partial sampling covers every client across enough rounds") {
    std::set<int> seen;
    for (std::uint64_t s = 0; s < 200; ++s)
        for (int id : sample_clients(6, 0.34, s)) seen.insert(id);
    CHECK(seen == std::set<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("aggregation is the example-weighted parameter mean") {
    Rng r(1);
    const Model shape = init_model({3, 4}, 2, r);
    std::vector<ModelUpload> ups;
    ups.push_back({0, constant_model(shape, 3.0), 1});
    ups.push_back({1, constant_model(shape, 6.0), 2});
    ups.push_back({2, constant_model(shape, 9.0), 3});
    const Model agg = aggregate_models(ups);
    // (1*3 + 2*6 + 3*9) / 6 = 7
    for (const Layer& l : agg.extractor) {
        for (size_t i = 0; i < l.W.size(); ++i)
            CHECK(l.W.data()[i] == doctest::Approx(7.0).epsilon(1e-12));
        for (size_t i = 0; i < l.b.size(); ++i)
            CHECK(l.b.data()[i] == doctest::Approx(7.0).epsilon(1e-12));
    }
    for (size_t i = 0; i < agg.head.W.size(); ++i)
        CHECK(agg.head.W.data()[i] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("aggregating identical models returns them bitwise") {
    Rng r(5);
    const Model m = init_model({3, 5, 4}, 6, r);
    std::vector<ModelUpload> ups;
    ups.push_back({0, m, 10});
    ups.push_back({1, m, 999});
    ups.push_back({2, m, 1});
    CHECK(same_model(aggregate_models(ups), m));
}

TEST_CASE("a single upload aggregates to itself bitwise") {
    Rng r(6);
    const Model m = init_model({2, 3}, 4, r);
    CHECK(same_model(aggregate_models({{3, m, 17}}), m));
}

TEST_CASE("upload order does not change the aggregate") {
    Rng r(7);
    const Model shape = init_model({3, 4}, 3, r);
    Rng fill(8);
    auto randomized = [&](int id, long long n) {
        Model m = shape;
        for (Layer& l : m.extractor)
            for (size_t i = 0; i < l.W.size(); ++i) l.W.data()[i] = fill.normal();
        for (size_t i = 0; i < m.head.W.size(); ++i) m.head.W.data()[i] = fill.normal();
        return ModelUpload{id, m, n};
    };
    std::vector<ModelUpload> ups;
    ups.push_back(randomized(0, 3));
    ups.push_back(randomized(1, 5));
    ups.push_back(randomized(2, 2));
    const Model sorted_in = aggregate_models(ups);
    std::swap(ups[0], ups[2]);
    std::swap(ups[1], ups[2]);
    const Model shuffled_in = aggregate_models(ups);
    CHECK(same_model(sorted_in, shuffled_in));
}

TEST_CASE("aggregation rejects malformed upload sets") {
    Rng r(9);
    const Model m = init_model({2, 3}, 3, r);
    const Model other = init_model({2, 4}, 3, r);

    CHECK_THROWS_AS(aggregate_models({}), ProtocolError);
    CHECK_THROWS_AS(aggregate_models({{0, m, 5}, {0, m, 5}}), ProtocolError);
    CHECK_THROWS_AS(aggregate_models({{0, m, 5}, {1, other, 5}}), ProtocolError);
    CHECK_THROWS_AS(aggregate_models({{0, m, 0}, {1, m, 0}}), ProtocolError);
    CHECK_THROWS_AS(aggregate_models({{0, m, -2}, {1, m, 5}}), ProtocolError);
}

TEST_CASE("swapping client execution order leaves the uploads bitwise equal") {
    const ExperimentConfig cfg = tiny_config();
    Bench a = make_bench(cfg);
    Bench b = make_bench(cfg);

    ClientUpdateResult a0 = client_update(a.clients[0], a.server.global_model, nullptr,
                                          a.opt, 1);
    ClientUpdateResult a1 = client_update(a.clients[1], a.server.global_model, nullptr,
                                          a.opt, 1);
    ClientUpdateResult b1 = client_update(b.clients[1], b.server.global_model, nullptr,
                                          b.opt, 1);
    ClientUpdateResult b0 = client_update(b.clients[0], b.server.global_model, nullptr,
                                          b.opt, 1);

    CHECK(same_model(a.clients[0].model, b.clients[0].model));
    CHECK(same_model(a.clients[1].model, b.clients[1].model));
    CHECK(same_matrix(a0.centroids.centroids, b0.centroids.centroids));
    CHECK(same_matrix(a1.centroids.centroids, b1.centroids.centroids));
    CHECK(a0.losses.total == b0.losses.total);
    CHECK(a1.losses.total == b1.losses.total);
}

TEST_CASE("the unlabeled set drives the per-epoch batch count") {
    const ExperimentConfig cfg = tiny_config();
    Bench b = make_bench(cfg);
    const int nu = b.clients[0].shard.n_unlabeled();
    const int per_epoch = (nu + b.opt.batch_size - 1) / b.opt.batch_size;
    const ClientUpdateResult res =
        client_update(b.clients[0], b.server.global_model, nullptr, b.opt, 1);
    CHECK(res.losses.batches == b.opt.local_epochs * per_epoch);
}

TEST_CASE("a zero learning rate makes the round a bitwise fixed point") {
    ExperimentConfig cfg = tiny_config();
    cfg.federation.learning_rate = 0.0;
    Bench b = make_bench(cfg);
    const Model before = b.server.global_model;

    const RoundRecord rec =
        run_round(b.server, b.clients, b.opt, b.part.test, b.part.taxonomy);
    CHECK(same_model(b.server.global_model, before));
    CHECK(b.server.rounds_done == 1);
    CHECK(rec.round_index == 1);
    CHECK(rec.metrics.acc_all >= 0.0);
}

TEST_CASE("calibration terms stay silent until global centroids exist") {
    const ExperimentConfig cfg = tiny_config();
    Bench b = make_bench(cfg);
    REQUIRE(!b.server.global_centroids.has_value());

    const RoundRecord r1 =
        run_round(b.server, b.clients, b.opt, b.part.test, b.part.taxonomy);
    for (const auto& [id, losses] : r1.client_losses) {
        CHECK(losses.L_ce == 0.0);
        CHECK(losses.L_cluster == 0.0);
        CHECK(losses.L_s > 0.0);
    }
    REQUIRE(b.server.global_centroids.has_value());
    // one global centroid per classifier output by default
    CHECK(b.server.global_centroids->count() == cfg.data.classes);
    CHECK(b.server.global_centroids->origin == CentroidSet::Origin::kGlobal);

    const RoundRecord r2 =
        run_round(b.server, b.clients, b.opt, b.part.test, b.part.taxonomy);
    double ce = 0.0;
    for (const auto& [id, losses] : r2.client_losses) ce += losses.L_ce;
    CHECK(ce > 0.0);
}

TEST_CASE("unsampled clients keep their state and stale pseudo-counts") {
    ExperimentConfig cfg = tiny_config();
    cfg.federation.participation = 0.5; // 1 of 2 clients per round
    Bench b = make_bench(cfg);

    const RoundRecord rec =
        run_round(b.server, b.clients, b.opt, b.part.test, b.part.taxonomy);
    REQUIRE(rec.sampled.size() == 1);
    const int skipped = rec.sampled[0] == 0 ? 1 : 0;
    const ClientState& idle = b.clients[static_cast<size_t>(skipped)];
    CHECK(same_model(idle.model, b.server.global_model) == false);
    CHECK(idle.pseudo_counts.n_max == 0.0); // never updated
    const ClientState& trained = b.clients[static_cast<size_t>(rec.sampled[0])];
    CHECK(trained.pseudo_counts.n_max > 0.0);
}

TEST_CASE("a failing client aborts the round before the server mutates") {
    ExperimentConfig cfg = tiny_config();
    Bench b = make_bench(cfg);
    b.opt.local_centroids = 100000; // more centroids than shard rows
    const Model before = b.server.global_model;
    CHECK_THROWS_AS(run_round(b.server, b.clients, b.opt, b.part.test, b.part.taxonomy),
                    ConfigError);
    CHECK(same_model(b.server.global_model, before));
    CHECK(b.server.rounds_done == 0);
    CHECK(!b.server.global_centroids.has_value());
}

TEST_CASE("hidden truth labels steer evaluation but never training") {
    const ExperimentConfig cfg = tiny_config();
    Bench honest = make_bench(cfg);
    Bench scrambled = make_bench(cfg);

    // overwrite every unlabeled truth label with a constant seen class
    for (ClientState& st : scrambled.clients) {
        std::vector<int> fake(static_cast<size_t>(st.shard.n_unlabeled()),
                              honest.part.taxonomy.seen[0]);
        st.shard.set_unlabeled_truth(EvalAccess::key(), fake);
    }

    for (int round = 0; round < 2; ++round) {
        run_round(honest.server, honest.clients, honest.opt, honest.part.test,
                  honest.part.taxonomy);
        run_round(scrambled.server, scrambled.clients, scrambled.opt, scrambled.part.test,
                  scrambled.part.taxonomy);
    }
    CHECK(same_model(honest.server.global_model, scrambled.server.global_model));
    CHECK(same_matrix(honest.server.global_centroids->centroids,
                      scrambled.server.global_centroids->centroids));
}

TEST_CASE("full experiments are reproducible and track their best round") {
    const ExperimentConfig cfg = tiny_config();
    const ExperimentResult a = run_experiment(cfg, "");
    const ExperimentResult b = run_experiment(cfg, "");

    REQUIRE(a.records.size() == 2);
    CHECK(same_model(a.final_model, b.final_model));
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].metrics.acc_all == b.records[i].metrics.acc_all);
        CHECK(a.records[i].metrics.acc_seen == b.records[i].metrics.acc_seen);
    }
    REQUIRE(a.best_round >= 1);
    REQUIRE(a.best_round <= 2);
    for (const RoundRecord& rec : a.records)
        CHECK(a.records[static_cast<size_t>(a.best_round - 1)].metrics.acc_all >=
              rec.metrics.acc_all);
}

TEST_CASE("a different seed moves the run") {
    ExperimentConfig cfg = tiny_config();
    const ExperimentResult a = run_experiment(cfg, "");
    cfg.seed = 4;
    const ExperimentResult b = run_experiment(cfg, "");
    CHECK(!same_model(a.final_model, b.final_model));
}

TEST_CASE("experiment artifacts land in the output directory") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "fedossl_fed_artifacts";
    fs::remove_all(dir);
    const ExperimentConfig cfg = tiny_config();
    run_experiment(cfg, dir.string());
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "summary.txt"));
    CHECK(fs::exists(dir / "taxonomy.txt"));
    fs::remove_all(dir);
}
