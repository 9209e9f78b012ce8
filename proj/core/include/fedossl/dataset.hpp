#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedossl/matrix.hpp"
#include "fedossl/rng.hpp"

namespace fedossl {

struct Dataset {
    Matrix X;           // one example per row
    std::vector<int> y; // class ids, 0-based
    int classes = 0;

    int dims() const { return X.cols(); }
    int size() const { return X.rows(); }
};

// Gaussian class clusters with unit covariance; mean vectors are rejection-
// sampled until all pairwise distances reach `separation`. Deterministic
// given the seed; examples are emitted class-major.
Dataset generate_synthetic(int classes, int dims, int per_class, double separation,
                           uint64_t seed);

// Headerless CSV, one example per row: feature values then an integer class
// id. Errors cite the 1-based line number.
Dataset ingest_csv(const std::string& path);
void export_csv(const std::string& path, const Dataset& ds);

struct LabeledSet {
    Matrix X;
    std::vector<int> y;
    int size() const { return X.rows(); }
};

class ClientShard;
class EvalKey;
struct ClassTaxonomy;
ClassTaxonomy derive_taxonomy(const std::vector<ClientShard>& shards);

// Capability token for reading the ground truth of unlabeled examples.
// Only evaluation-side code can mint one: the taxonomy deriver is a friend,
// and test/audit translation units define EvalAccess themselves. Training
// code paths cannot construct it, which keeps hidden labels out of reach.
class EvalKey {
    EvalKey() = default;
    friend struct EvalAccess;
    friend ClassTaxonomy derive_taxonomy(const std::vector<ClientShard>& shards);
};

// Declared here, defined only by evaluation/test code that is entitled to
// ground truth. Convention: struct EvalAccess { static EvalKey key() { return {}; } };
struct EvalAccess;

class ClientShard {
public:
    ClientShard() = default;
    ClientShard(int client_id, LabeledSet labeled, Matrix unlabeled,
                std::vector<int> unlabeled_truth);

    int client_id = -1;
    LabeledSet labeled;
    Matrix unlabeled; // features only; ground truth gated behind EvalKey

    int n() const { return labeled.size() + unlabeled.rows(); }
    int n_labeled() const { return labeled.size(); }
    int n_unlabeled() const { return unlabeled.rows(); }

    const std::vector<int>& unlabeled_truth(EvalKey) const { return unlabeled_truth_; }
    void set_unlabeled_truth(EvalKey, std::vector<int> truth);

private:
    std::vector<int> unlabeled_truth_;
};

struct TestSet {
    Matrix X;
    std::vector<int> y;
    int size() const { return X.rows(); }
};

struct ClassTaxonomy {
    std::vector<int> seen;                        // sorted class ids
    std::vector<std::vector<int>> locally_unseen; // per client, sorted
    std::vector<std::vector<int>> globally_unseen;

    int num_clients() const { return static_cast<int>(locally_unseen.size()); }
    std::vector<int> all_locally_unseen() const;  // union over clients, sorted
    std::vector<int> all_globally_unseen() const;
    std::vector<int> all_unseen() const;
};

struct PartitionParams {
    double seen_fraction = 0.6;
    double labeled_fraction = 0.5;
    int clients = 4;
    int gu_per_client = 1; // exclusive unseen classes per client
    int lu_per_client = 1; // shared unseen classes per client (each lives on >= 2 clients)
    // 0 = IID equal chunks of each seen class; > 0 draws per-class client
    // proportions from a symmetric Dirichlet for heterogeneity stress tests.
    double dirichlet_alpha = 0.0;
};

struct PartitionResult {
    ClassTaxonomy taxonomy;
    std::vector<ClientShard> shards;
    TestSet test;
};

// Splits classes into seen/unseen, assigns each client its globally-unseen
// block and shared locally-unseen classes, carves a held-out test slice of
// every class, distributes seen-class data across all clients, and labels
// `labeled_fraction` of each client's seen-class examples. Infeasible class
// arithmetic raises a configuration error spelling out the counts.
PartitionResult partition_open_world(const Dataset& ds, const PartitionParams& params,
                                     uint64_t seed);

// derive_taxonomy (declared above) reconstructs the taxonomy from shard
// contents alone: a class is seen iff it appears in any labeled set; an
// unseen class is locally unseen for the clients holding it iff it appears
// in at least two clients' unlabeled data, globally unseen for its sole
// holder otherwise.

// Structured-text dump of seen/locally-unseen/globally-unseen assignments.
void write_taxonomy(const std::string& path, const ClassTaxonomy& taxonomy);

} // namespace fedossl
