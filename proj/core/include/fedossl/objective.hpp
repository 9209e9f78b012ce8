#pragma once

//
// The composite client training objective:
//
//   total = (L_s + alpha * L_u) + beta * R + gamma * (L_ce + L_cluster)
//
// L_s        supervised cross-entropy on the labeled part
// L_u        pairwise cross-entropy pulling each prediction toward its
//            partner's (same-class labeled partner, else cosine-nearest row)
// R          uncertainty regularizer: confidence deficit weighted by a
//            pseudo-class-frequency factor
// L_ce       cross-entropy toward the global-centroid assignment of each
//            unlabeled feature (classifier calibration)
// L_cluster  cross-entropy between a sample's centroid assignment and its
//            partner's, promoting clusterable features
//
// Each term exists both as a tape-graph builder (for gradient checking and
// composition) and as a standalone value+gradient operation.
//

#include <optional>
#include <vector>

#include "fedossl/autodiff.hpp"
#include "fedossl/model.hpp"
#include "fedossl/rng.hpp"

namespace fedossl {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double tau = 0.5; // uncertainty weight base, must lie in (0,1]
};

enum class PairSource { kSameClassLabeled, kNearestNeighbor };

struct PairAssignment {
    std::vector<int> partner;        // partner[j] != j, in range
    std::vector<PairSource> source;
    int size() const { return static_cast<int>(partner.size()); }
};

// Pair every row of a feature batch. Rows covered by `labels` (a prefix of
// the batch; empty for fully unlabeled batches) pair with a uniformly random
// same-class labeled row when one exists, falling back to their cosine-
// nearest neighbor. All other rows pair with the cosine-nearest other row.
// Ties break toward the lowest index.
PairAssignment build_pairs(const Matrix& features, const std::vector<int>& labels, Rng& rng);

struct PseudoClassCounts {
    std::vector<double> counts; // per class, exponential moving average
    double decay = 0.9;
    double n_max = 0.0;

    explicit PseudoClassCounts(int num_classes = 0, double decay_ = 0.9)
        : counts(static_cast<size_t>(num_classes), 0.0), decay(decay_) {}
};

// Folds the batch's argmax histogram into the moving average:
// counts <- decay * counts + histogram; n_max follows. Empty batch: no-op.
PseudoClassCounts update_pseudo_counts(const PseudoClassCounts& state, const Matrix& logits);
PseudoClassCounts update_pseudo_counts(const PseudoClassCounts& state,
                                       const std::vector<int>& argmaxes);

// |rho| factor per unlabeled row: tau^(1 - n_c/n_max) for the row's predicted
// class c (tau^(n_c/n_max) with rho_inverse). Empty when n_max == 0, which
// suppresses the uncertainty term for that batch.
std::vector<double> compute_rho_weights(const Model& m, const Matrix& unlabeled,
                                        const PseudoClassCounts& counts, double tau,
                                        bool rho_inverse);

// Soft assignment of feature rows to centroids:
// q = softmax over centroids of cos(z, m_c) / temperature. Used as a constant
// target distribution.
Matrix assignment_to_global(const Matrix& features, const Matrix& centroids,
                            double temperature);

// ---- Tape-graph builders (compose on a shared tape, exact gradients) ----

// Mean cross-entropy of one-hot labels vs softmax(logits).
Node supervised_loss_graph(Tape& t, Node logits, const std::vector<int>& labels);

// Mean over rows j of H(p_j, p_partner(j)); partner indices fixed. With
// stop_gradient_on_target the partner's probabilities become constants.
Node pairwise_loss_graph(Tape& t, Node logits, const PairAssignment& pairs,
                         bool stop_gradient_on_target);

// Mean of rho_weights[j] * (1 - max_c p_j); weights constant, gradient flows
// through the max probability. rho_weights empty => constant zero.
Node uncertainty_loss_graph(Tape& t, Node unlabeled_logits,
                            const std::vector<double>& rho_weights);

// Mean H(targets_row, softmax(logits_row)); targets constant.
Node calibration_ce_graph(Tape& t, Node unlabeled_logits, const Matrix& targets);

// Mean H(targets_row_j, q(features_partner(j))) where q is the differentiable
// temperature-scaled cosine assignment to the (constant) centroids.
Node calibration_cluster_graph(Tape& t, Node unlabeled_features, const Matrix& targets,
                               const PairAssignment& pairs, const Matrix& centroids,
                               double temperature);

// ---- Standalone operations (value + gradient wrappers) ----

struct LossValue {
    double value = 0.0;
    Gradient grad;
};

LossValue supervised_loss(const Model& m, const Matrix& X, const std::vector<int>& labels);
LossValue pairwise_loss(const Model& m, const Matrix& X, const PairAssignment& pairs,
                        bool stop_gradient_on_target = false);
LossValue uncertainty_loss(const Model& m, const Matrix& unlabeled,
                           const PseudoClassCounts& counts, double tau,
                           bool rho_inverse = false);
LossValue calibration_ce_loss(const Model& m, const Matrix& unlabeled,
                              const Matrix& centroids, double temperature);
LossValue calibration_cluster_loss(const Model& m, const Matrix& unlabeled,
                                   const PairAssignment& pairs, const Matrix& centroids,
                                   double temperature);

// ---- The composite objective ----

struct ObjectiveOptions {
    LossWeights weights;
    double temperature = 0.1;
    bool rho_inverse = false;
    bool stop_gradient_on_target = false;
    bool calibration_ce_enabled = true;
    bool calibration_cluster_enabled = true;
    int freeze_extractor_below = 0; // extractor layers < k receive no gradient
};

struct ObjectiveResult {
    double L_s = 0.0;
    double L_u = 0.0;
    double R = 0.0;
    double L_ce = 0.0;
    double L_cluster = 0.0;
    double total = 0.0;
    Gradient grad;
    std::vector<int> combined_argmax; // predicted classes, labeled rows first
};

// One forward pass over [labeled; unlabeled], every term on one tape, one
// reverse pass. Global centroids absent (nullptr) => calibration terms are
// zero (first federation round). Pairing randomness comes from pair_rng.
ObjectiveResult total_objective(const Model& m, const Matrix& labeled_X,
                                const std::vector<int>& labeled_y, const Matrix& unlabeled_X,
                                const PseudoClassCounts& counts, const Matrix* global_centroids,
                                const ObjectiveOptions& opt, Rng& pair_rng);

} // namespace fedossl
