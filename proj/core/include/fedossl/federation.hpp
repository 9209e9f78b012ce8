#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedossl/clustering.hpp"
#include "fedossl/config.hpp"
#include "fedossl/dataset.hpp"
#include "fedossl/evaluation.hpp"
#include "fedossl/model.hpp"
#include "fedossl/objective.hpp"

namespace fedossl {

// Tags naming each independent seed stream: every random decision draws
// from derive_seed(seed, tag, ...), so adding a consumer never perturbs the
// others. Part of the reproducibility contract, hence public.
enum : std::uint64_t {
    kSeedModelInit = 0x41,
    kSeedClientSample = 0x42,
    kSeedBatchOrder = 0x43,
    kSeedPairing = 0x44,
};

// Everything a training round needs beyond the participants' state.
struct FederationOptions {
    int local_epochs = 5;
    int batch_size = 64;
    double participation = 1.0;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    ObjectiveOptions objective;
    int local_centroids = 32;
    int global_centroids = 0; // 0: one per class
    BalancedClusterOptions clustering;
    bool kmeans_fallback = false;
    std::uint64_t seed = 0;
};

FederationOptions make_federation_options(const ExperimentConfig& cfg);

struct ClientState {
    int client_id = 0;
    Model model; // local copy, re-seeded from the global model each round
    OptimizerState optimizer;
    PseudoClassCounts pseudo_counts;
    ClientShard shard;
    std::optional<CentroidSet> last_local_centroids;
};

struct ServerState {
    Model global_model;
    std::optional<CentroidSet> global_centroids; // absent before round 1 ends
    int rounds_done = 0;
};

struct MeanLosses {
    double L_s = 0.0, L_u = 0.0, R = 0.0, L_ce = 0.0, L_cluster = 0.0, total = 0.0;
    int batches = 0;
};

struct TrainLogRow {
    int round = 0, epoch = 0, batch = 0;
    double L_s = 0.0, L_u = 0.0, R = 0.0, L_ce = 0.0, L_cluster = 0.0, total = 0.0;
};

struct RoundRecord {
    int round_index = 0; // 1-based
    std::vector<int> sampled;
    std::vector<std::pair<int, MeanLosses>> client_losses;
    MetricsReport metrics;
    double seconds = 0.0;
};

// Uniform sample without replacement of ceil(participation * count) ids,
// returned sorted ascending.
std::vector<int> sample_clients(int count, double participation, std::uint64_t round_seed);

struct ClientUpdateResult {
    CentroidSet centroids;
    MeanLosses losses;
};

// One client's round: copy the global model, fresh optimizer, E epochs of
// mini-batch SGD on the composite objective (unlabeled data drives the batch
// count; labeled rows cycle through each batch), then L balanced centroids
// over the full shard's features. Batch order and pairing randomness are
// derived from (seed, round, client), so clients can run in any order.
ClientUpdateResult client_update(ClientState& state, const Model& global_model,
                                 const CentroidSet* global_centroids,
                                 const FederationOptions& opt, int round,
                                 std::vector<TrainLogRow>* log = nullptr);

struct ModelUpload {
    int client_id = 0;
    Model model;
    long long examples = 0;
};

// Data-size-weighted parameter average, summed in ascending client-id order.
// Computed as ref + sum w_i (theta_i - ref) so that identical uploads come
// back bitwise identical (zero-learning-rate rounds are exact fixed points).
Model aggregate_models(const std::vector<ModelUpload>& uploads);

// Sample -> client updates -> model aggregation -> centroid aggregation ->
// evaluation. Unsampled clients keep their state; any client failure aborts
// the round before the server mutates. Only centroids uploaded this round
// are aggregated.
RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const FederationOptions& opt, const TestSet& test,
                      const ClassTaxonomy& taxonomy,
                      std::vector<std::vector<TrainLogRow>>* logs = nullptr);

struct ExperimentResult {
    std::vector<RoundRecord> records;
    Model final_model;
    PartitionResult partition;
    int best_round = 0; // 1-based, by all-class accuracy; 0 when rounds = 0
};

// Full pipeline: synthesize data, partition across clients, train for the
// configured rounds, evaluate every round. With a nonempty out_dir, writes
// metrics.csv, per-client training logs, per-round centroid dumps, the
// matching table, a privacy ledger, the final checkpoint, and a summary.
// All artifact writes are atomic, and none embed wall-clock times, so equal
// seeds produce byte-identical files. on_round, when set, observes each
// record as it lands (progress reporting; it must not mutate anything).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                const std::function<void(const RoundRecord&)>& on_round = {});

} // namespace fedossl
