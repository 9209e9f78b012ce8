#include "fedossl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedossl/error.hpp"
#include "fedossl/numerics.hpp"

namespace fedossl {

namespace {

void check_tau(double tau) {
    if (!(tau > 0.0) || tau > 1.0)
        throw ConfigError("uncertainty weight base tau must lie in (0,1]");
}

void check_labels(const std::vector<int>& labels, int num_classes) {
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw DataError("label " + std::to_string(y) + " outside class range [0," +
                            std::to_string(num_classes) + ")");
}

void check_pairs(const PairAssignment& pairs, int n) {
    if (pairs.size() != n) throw ConfigError("pair assignment does not cover the batch");
    for (int j = 0; j < n; ++j) {
        const int p = pairs.partner[static_cast<size_t>(j)];
        if (p < 0 || p >= n || p == j)
            throw ConfigError("pair assignment invalid at row " + std::to_string(j));
    }
}

std::vector<int> iota_vec(int from, int count) {
    std::vector<int> v(static_cast<size_t>(count));
    std::iota(v.begin(), v.end(), from);
    return v;
}

Matrix one_hot(const std::vector<int>& labels, int num_classes) {
    Matrix t(static_cast<int>(labels.size()), num_classes);
    for (size_t j = 0; j < labels.size(); ++j) t(static_cast<int>(j), labels[j]) = 1.0;
    return t;
}

} // namespace

PairAssignment build_pairs(const Matrix& features, const std::vector<int>& labels, Rng& rng) {
    const int n = features.rows();
    if (n < 2) throw ConfigError("build_pairs: need at least 2 rows");
    const int nl = static_cast<int>(labels.size());
    if (nl > n) throw ConfigError("build_pairs: more labels than rows");

    const Matrix unit = normalize_rows(features);
    auto nearest = [&unit, n](int j) {
        int best = -1;
        double best_sim = -2.0;
        for (int i = 0; i < n; ++i) {
            if (i == j) continue;
            double dot = 0.0;
            const double* a = unit.row(i);
            const double* b = unit.row(j);
            for (int k = 0; k < unit.cols(); ++k) dot += a[k] * b[k];
            if (dot > best_sim) {
                best_sim = dot;
                best = i;
            }
        }
        return best;
    };

    PairAssignment out;
    out.partner.resize(static_cast<size_t>(n));
    out.source.resize(static_cast<size_t>(n));
    std::vector<int> same_class;
    for (int j = 0; j < n; ++j) {
        if (j < nl) {
            same_class.clear();
            for (int i = 0; i < nl; ++i)
                if (i != j && labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)])
                    same_class.push_back(i);
            if (!same_class.empty()) {
                out.partner[static_cast<size_t>(j)] =
                    same_class[static_cast<size_t>(rng.uniform_int(same_class.size()))];
                out.source[static_cast<size_t>(j)] = PairSource::kSameClassLabeled;
                continue;
            }
        }
        out.partner[static_cast<size_t>(j)] = nearest(j);
        out.source[static_cast<size_t>(j)] = PairSource::kNearestNeighbor;
    }
    return out;
}

PseudoClassCounts update_pseudo_counts(const PseudoClassCounts& state,
                                       const std::vector<int>& argmaxes) {
    if (argmaxes.empty()) return state;
    PseudoClassCounts next = state;
    for (double& c : next.counts) c *= next.decay;
    for (int a : argmaxes) {
        if (a < 0 || a >= static_cast<int>(next.counts.size()))
            throw ConfigError("update_pseudo_counts: prediction outside class range");
        next.counts[static_cast<size_t>(a)] += 1.0;
    }
    next.n_max = *std::max_element(next.counts.begin(), next.counts.end());
    return next;
}

PseudoClassCounts update_pseudo_counts(const PseudoClassCounts& state, const Matrix& logits) {
    std::vector<int> argmaxes(static_cast<size_t>(logits.rows()));
    for (int i = 0; i < logits.rows(); ++i) argmaxes[static_cast<size_t>(i)] = argmax_row(logits, i);
    return update_pseudo_counts(state, argmaxes);
}

namespace {

std::vector<double> rho_weights_from_logits(const Matrix& logits_u,
                                            const PseudoClassCounts& counts, double tau,
                                            bool rho_inverse) {
    check_tau(tau);
    if (counts.n_max <= 0.0 || logits_u.rows() == 0) return {};
    std::vector<double> w(static_cast<size_t>(logits_u.rows()));
    for (int j = 0; j < logits_u.rows(); ++j) {
        const int c = argmax_row(logits_u, j);
        if (c >= static_cast<int>(counts.counts.size()))
            throw ConfigError("uncertainty weights: class counts narrower than classifier");
        const double frac = counts.counts[static_cast<size_t>(c)] / counts.n_max;
        const double exponent = rho_inverse ? frac : 1.0 - frac;
        w[static_cast<size_t>(j)] = std::pow(tau, exponent);
    }
    return w;
}

} // namespace

std::vector<double> compute_rho_weights(const Model& m, const Matrix& unlabeled,
                                        const PseudoClassCounts& counts, double tau,
                                        bool rho_inverse) {
    if (unlabeled.rows() == 0) {
        check_tau(tau);
        return {};
    }
    return rho_weights_from_logits(forward(m, unlabeled).logits, counts, tau, rho_inverse);
}

Matrix assignment_to_global(const Matrix& features, const Matrix& centroids,
                            double temperature) {
    if (features.cols() != centroids.cols())
        throw ConfigError("assignment_to_global: centroid dim does not match feature dim");
    if (temperature <= 0.0) throw ConfigError("assignment_to_global: temperature must be positive");
    const Matrix sims = matmul_transb(normalize_rows(features), normalize_rows(centroids));
    return softmax_rows(scale(sims, 1.0 / temperature));
}

Node supervised_loss_graph(Tape& t, Node logits, const std::vector<int>& labels) {
    const Matrix& lv = t.value(logits);
    if (lv.rows() == 0 || lv.rows() != static_cast<int>(labels.size()))
        throw DataError("supervised loss: labels do not cover the batch");
    check_labels(labels, lv.cols());
    Node targets = t.constant(one_hot(labels, lv.cols()));
    Node log_p = t.log_clamped(t.softmax_rows(logits));
    return t.scale(t.sum(t.mul(targets, log_p)), -1.0 / lv.rows());
}

Node pairwise_loss_graph(Tape& t, Node logits, const PairAssignment& pairs,
                         bool stop_gradient_on_target) {
    const int n = t.value(logits).rows();
    check_pairs(pairs, n);
    Node p = t.softmax_rows(logits);
    Node partner = t.gather_rows(p, pairs.partner);
    if (stop_gradient_on_target) partner = t.detach(partner);
    return t.scale(t.sum(t.mul(p, t.log_clamped(partner))), -1.0 / n);
}

Node uncertainty_loss_graph(Tape& t, Node unlabeled_logits,
                            const std::vector<double>& rho_weights) {
    const int n = t.value(unlabeled_logits).rows();
    if (rho_weights.empty()) return t.constant(Matrix(1, 1)); // first-batch skip
    if (static_cast<int>(rho_weights.size()) != n)
        throw ConfigError("uncertainty loss: weights do not cover the batch");
    Matrix w(n, 1);
    for (int j = 0; j < n; ++j) w(j, 0) = rho_weights[static_cast<size_t>(j)];
    Node max_p = t.row_max(t.softmax_rows(unlabeled_logits));
    Node deficit = t.add(t.constant(Matrix(n, 1, 1.0)), t.scale(max_p, -1.0));
    return t.scale(t.sum(t.mul(t.constant(std::move(w)), deficit)), 1.0 / n);
}

Node calibration_ce_graph(Tape& t, Node unlabeled_logits, const Matrix& targets) {
    const Matrix& lv = t.value(unlabeled_logits);
    if (!lv.same_shape(targets))
        throw ConfigError("calibration: target distribution width must equal classifier width");
    Node log_p = t.log_clamped(t.softmax_rows(unlabeled_logits));
    return t.scale(t.sum(t.mul(t.constant(targets), log_p)), -1.0 / lv.rows());
}

Node calibration_cluster_graph(Tape& t, Node unlabeled_features, const Matrix& targets,
                               const PairAssignment& pairs, const Matrix& centroids,
                               double temperature) {
    const Matrix& fv = t.value(unlabeled_features);
    check_pairs(pairs, fv.rows());
    if (fv.cols() != centroids.cols())
        throw ConfigError("calibration: centroid dim does not match feature dim");
    if (targets.rows() != fv.rows() || targets.cols() != centroids.rows())
        throw ConfigError("calibration: target shape mismatch");
    if (temperature <= 0.0) throw ConfigError("calibration: temperature must be positive");

    Node partner_z = t.gather_rows(unlabeled_features, pairs.partner);
    Node sims = t.matmul(t.normalize_rows(partner_z),
                         t.constant(transpose(normalize_rows(centroids))));
    Node q = t.softmax_rows(t.scale(sims, 1.0 / temperature));
    return t.scale(t.sum(t.mul(t.constant(targets), t.log_clamped(q))), -1.0 / fv.rows());
}

namespace {

LossValue run_standalone(const Model& m,
                         const std::function<Node(Tape&, const ModelVars&)>& build) {
    Tape t;
    ModelVars vars = lift_model(t, m);
    Node loss = build(t, vars);
    LossValue out;
    out.value = t.scalar(loss);
    out.grad = backward(t, vars, loss, m);
    return out;
}

} // namespace

LossValue supervised_loss(const Model& m, const Matrix& X, const std::vector<int>& labels) {
    return run_standalone(m, [&](Tape& t, const ModelVars& v) {
        return supervised_loss_graph(t, forward_on_tape(t, v, t.constant(X)).logits, labels);
    });
}

LossValue pairwise_loss(const Model& m, const Matrix& X, const PairAssignment& pairs,
                        bool stop_gradient_on_target) {
    return run_standalone(m, [&](Tape& t, const ModelVars& v) {
        return pairwise_loss_graph(t, forward_on_tape(t, v, t.constant(X)).logits, pairs,
                                   stop_gradient_on_target);
    });
}

LossValue uncertainty_loss(const Model& m, const Matrix& unlabeled,
                           const PseudoClassCounts& counts, double tau, bool rho_inverse) {
    const std::vector<double> w = compute_rho_weights(m, unlabeled, counts, tau, rho_inverse);
    if (unlabeled.rows() == 0) return {0.0, zeros_like(m)};
    return run_standalone(m, [&](Tape& t, const ModelVars& v) {
        return uncertainty_loss_graph(t, forward_on_tape(t, v, t.constant(unlabeled)).logits, w);
    });
}

LossValue calibration_ce_loss(const Model& m, const Matrix& unlabeled,
                              const Matrix& centroids, double temperature) {
    if (centroids.rows() != m.num_classes())
        throw ConfigError("calibration: global centroid count " + std::to_string(centroids.rows()) +
                          " must equal classifier width " + std::to_string(m.num_classes()));
    const Matrix targets =
        assignment_to_global(forward(m, unlabeled).features, centroids, temperature);
    return run_standalone(m, [&](Tape& t, const ModelVars& v) {
        return calibration_ce_graph(t, forward_on_tape(t, v, t.constant(unlabeled)).logits, targets);
    });
}

LossValue calibration_cluster_loss(const Model& m, const Matrix& unlabeled,
                                   const PairAssignment& pairs, const Matrix& centroids,
                                   double temperature) {
    if (centroids.rows() != m.num_classes())
        throw ConfigError("calibration: global centroid count " + std::to_string(centroids.rows()) +
                          " must equal classifier width " + std::to_string(m.num_classes()));
    const Matrix targets =
        assignment_to_global(forward(m, unlabeled).features, centroids, temperature);
    return run_standalone(m, [&](Tape& t, const ModelVars& v) {
        return calibration_cluster_graph(t, forward_on_tape(t, v, t.constant(unlabeled)).features,
                                         targets, pairs, centroids, temperature);
    });
}

ObjectiveResult total_objective(const Model& m, const Matrix& labeled_X,
                                const std::vector<int>& labeled_y, const Matrix& unlabeled_X,
                                const PseudoClassCounts& counts, const Matrix* global_centroids,
                                const ObjectiveOptions& opt, Rng& pair_rng) {
    const LossWeights& w = opt.weights;
    check_tau(w.tau);
    if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0)
        throw ConfigError("total objective: loss weights must be nonnegative");
    const int nl = labeled_X.rows();
    const int nu = unlabeled_X.rows();
    if (nl != static_cast<int>(labeled_y.size()))
        throw DataError("total objective: labeled batch size mismatch");
    if (nl + nu == 0) throw DataError("total objective: empty batch");
    check_labels(labeled_y, m.num_classes());

    Tape t;
    ModelVars vars = lift_model(t, m, opt.freeze_extractor_below);
    Node x = t.constant(vstack(labeled_X, unlabeled_X));
    ForwardNodes fwd = forward_on_tape(t, vars, x);
    const std::vector<int> idx_l = iota_vec(0, nl);
    const std::vector<int> idx_u = iota_vec(nl, nu);

    Node zero = t.constant(Matrix(1, 1));
    Node loss_s = zero, loss_u = zero, loss_r = zero, loss_ce = zero, loss_cluster = zero;

    if (nl > 0)
        loss_s = supervised_loss_graph(t, nl == nl + nu ? fwd.logits : t.gather_rows(fwd.logits, idx_l),
                                       labeled_y);

    if (nl + nu >= 2) {
        const PairAssignment pairs = build_pairs(t.value(fwd.features), labeled_y, pair_rng);
        loss_u = pairwise_loss_graph(t, fwd.logits, pairs, opt.stop_gradient_on_target);
    }

    Node logits_u{};
    if (nu > 0) {
        logits_u = nl == 0 ? fwd.logits : t.gather_rows(fwd.logits, idx_u);
        const std::vector<double> rho =
            rho_weights_from_logits(nl == 0 ? t.value(fwd.logits) : t.value(logits_u), counts,
                                    w.tau, opt.rho_inverse);
        loss_r = uncertainty_loss_graph(t, logits_u, rho);
    }

    if (global_centroids != nullptr && w.gamma > 0.0 && nu > 0 &&
        (opt.calibration_ce_enabled || opt.calibration_cluster_enabled)) {
        if (global_centroids->rows() != m.num_classes())
            throw ConfigError("calibration: global centroid count " +
                              std::to_string(global_centroids->rows()) +
                              " must equal classifier width " + std::to_string(m.num_classes()));
        Node features_u = nl == 0 ? fwd.features : t.gather_rows(fwd.features, idx_u);
        const Matrix targets =
            assignment_to_global(t.value(features_u), *global_centroids, opt.temperature);
        if (opt.calibration_ce_enabled) loss_ce = calibration_ce_graph(t, logits_u, targets);
        if (opt.calibration_cluster_enabled && nu >= 2) {
            const PairAssignment pairs_u = build_pairs(t.value(features_u), {}, pair_rng);
            loss_cluster = calibration_cluster_graph(t, features_u, targets, pairs_u,
                                                     *global_centroids, opt.temperature);
        }
    }

    Node total = t.add(t.add(loss_s, t.scale(loss_u, w.alpha)),
                       t.add(t.scale(loss_r, w.beta),
                             t.scale(t.add(loss_ce, loss_cluster), w.gamma)));

    ObjectiveResult out;
    out.L_s = t.scalar(loss_s);
    out.L_u = t.scalar(loss_u);
    out.R = t.scalar(loss_r);
    out.L_ce = t.scalar(loss_ce);
    out.L_cluster = t.scalar(loss_cluster);
    out.total = t.scalar(total);
    out.grad = backward(t, vars, total, m);
    out.combined_argmax.resize(static_cast<size_t>(nl + nu));
    const Matrix& logits = t.value(fwd.logits);
    for (int j = 0; j < nl + nu; ++j)
        out.combined_argmax[static_cast<size_t>(j)] = argmax_row(logits, j);
    return out;
}

} // namespace fedossl
