#pragma once

//
// Equal-size clustering via entropy-regularized optimal transport.
//
// The assignment step solves  min <P, C> + eps * sum P (log P - 1)  over the
// transport polytope with uniform marginals (1/n rows, 1/L columns) using
// log-domain Sinkhorn scaling. Alternating with plan-weighted centroid
// updates gives a balanced analog of Lloyd's algorithm; the final hard
// assignment fills every cluster to floor(n/L) or ceil(n/L), so each
// uploaded centroid averages about n/L samples (the anonymity argument).
//

#include <cstdint>
#include <string>
#include <vector>

#include "fedossl/matrix.hpp"

namespace fedossl {

struct CentroidSet {
    Matrix centroids; // count x feature dim
    enum class Origin { kLocal, kGlobal } origin = Origin::kLocal;
    int client_id = -1; // meaningful for local sets only

    int count() const { return centroids.rows(); }
    int dim() const { return centroids.cols(); }
};

struct TransportPlan {
    Matrix plan; // n x L, nonnegative
    double epsilon = 0.0;
    int iterations_used = 0;
    bool converged = false;
};

struct SinkhornOptions {
    double epsilon = 0.0; // <= 0: auto-scale (see balanced_cluster)
    int max_iters = 500;
    double tolerance = 1e-6;
};

// Alternating log-domain scaling toward uniform marginals. Stops when both
// the maximum row-sum error (vs 1/n) and column-sum error (vs 1/L) fall
// below the tolerance, or after max_iters with converged=false.
TransportPlan sinkhorn_plan(const Matrix& cost, double epsilon, int max_iters,
                            double tolerance);

struct ClusterResult {
    CentroidSet centroids;
    std::vector<int> assignment;         // per input row, cluster index
    std::vector<double> objective_trace; // entropic transport cost per round
    bool all_converged = true;           // every Sinkhorn call converged
    double epsilon_used = 0.0;
};

struct BalancedClusterOptions {
    SinkhornOptions sinkhorn;
    int lloyd_rounds = 10;
    bool normalize_features = false; // length-normalize inputs first
};

// L equally sized clusters of the input rows. epsilon <= 0 selects
// 0.05 x median pairwise squared distance. Initialization is farthest-point
// sampling started from the point farthest from the data mean, so the
// outcome is independent of row order.
ClusterResult balanced_cluster(const Matrix& vectors, int L,
                               const BalancedClusterOptions& opts = {});

// Re-clusters the concatenation of all uploaded local centroid sets
// (ascending client order is the caller's responsibility) into G global
// centroids. With align_to set (the previous round's globals, same shape),
// the result rows are permuted so row j is the closest continuation of
// align_to's row j under an optimal one-to-one cosine matching; classifier
// calibration then keeps pushing each output channel toward the same
// physical cluster from round to round instead of a freshly scrambled one.
CentroidSet aggregate_global_centroids(const std::vector<CentroidSet>& local_sets, int G,
                                       const BalancedClusterOptions& opts = {},
                                       const CentroidSet* align_to = nullptr);

// Standard Lloyd iterations with the same initialization; unconstrained
// sizes. An emptied cluster is reseeded to the point farthest from the
// surviving centroids.
ClusterResult kmeans_cluster(const Matrix& vectors, int L, int lloyd_rounds = 10);

// Samples averaged into each uploaded centroid: n / L.
double anonymity_parameter(int n, int L);

// Structured-text centroid dump consumed by the cluster-evolution report.
void write_centroids(const std::string& path, const CentroidSet& set, int round);

} // namespace fedossl
