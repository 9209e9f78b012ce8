#include "fedossl/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedossl/error.hpp"
#include "fedossl/evaluation.hpp"
#include "fedossl/io.hpp"
#include "fedossl/numerics.hpp"

namespace fedossl {

TransportPlan sinkhorn_plan(const Matrix& cost, double epsilon, int max_iters,
                            double tolerance) {
    const int n = cost.rows();
    const int L = cost.cols();
    if (n == 0 || L == 0) throw ConfigError("sinkhorn_plan: empty cost matrix");
    if (epsilon <= 0.0) throw ConfigError("sinkhorn_plan: epsilon must be positive");
    if (!cost.all_finite()) throw ConfigError("sinkhorn_plan: cost must be finite");

    const double log_a = -std::log(static_cast<double>(n)); // log(1/n)
    const double log_b = -std::log(static_cast<double>(L)); // log(1/L)

    // K_log = -cost/eps; potentials f (rows) and g (cols) in log space.
    Matrix k_log(n, L);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < L; ++j) k_log(i, j) = -cost(i, j) / epsilon;

    std::vector<double> f(static_cast<size_t>(n), 0.0);
    std::vector<double> g(static_cast<size_t>(L), 0.0);
    std::vector<double> col_max(static_cast<size_t>(L));
    std::vector<double> col_sum(static_cast<size_t>(L));
    std::vector<double> row_buf(static_cast<size_t>(L));

    TransportPlan out;
    out.epsilon = epsilon;
    out.plan = Matrix(n, L);

    auto materialize = [&]() {
        for (int i = 0; i < n; ++i) {
            double* prow = out.plan.row(i);
            const double* krow = k_log.row(i);
            for (int j = 0; j < L; ++j)
                prow[j] = std::exp(krow[j] + f[static_cast<size_t>(i)] + g[static_cast<size_t>(j)]);
        }
    };
    auto marginal_errors = [&](double& row_err, double& col_err) {
        row_err = col_err = 0.0;
        std::fill(col_sum.begin(), col_sum.end(), 0.0);
        const double a = std::exp(log_a), b = std::exp(log_b);
        for (int i = 0; i < n; ++i) {
            const double* prow = out.plan.row(i);
            double s = 0.0;
            for (int j = 0; j < L; ++j) {
                s += prow[j];
                col_sum[static_cast<size_t>(j)] += prow[j];
            }
            row_err = std::max(row_err, std::fabs(s - a));
        }
        for (int j = 0; j < L; ++j)
            col_err = std::max(col_err, std::fabs(col_sum[static_cast<size_t>(j)] - b));
    };

    int it = 0;
    while (it < max_iters) {
        ++it;
        // f_i <- log a_i - LSE_j(K_ij + g_j): makes row sums exact.
        for (int i = 0; i < n; ++i) {
            const double* krow = k_log.row(i);
            double m = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < L; ++j) {
                row_buf[static_cast<size_t>(j)] = krow[j] + g[static_cast<size_t>(j)];
                m = std::max(m, row_buf[static_cast<size_t>(j)]);
            }
            double s = 0.0;
            for (int j = 0; j < L; ++j) s += std::exp(row_buf[static_cast<size_t>(j)] - m);
            f[static_cast<size_t>(i)] = log_a - (m + std::log(s));
        }
        // g_j <- log b_j - LSE_i(K_ij + f_i): two row-major passes keep the
        // column reduction cache-friendly.
        std::fill(col_max.begin(), col_max.end(), -std::numeric_limits<double>::infinity());
        for (int i = 0; i < n; ++i) {
            const double* krow = k_log.row(i);
            const double fi = f[static_cast<size_t>(i)];
            for (int j = 0; j < L; ++j)
                col_max[static_cast<size_t>(j)] = std::max(col_max[static_cast<size_t>(j)], krow[j] + fi);
        }
        std::fill(col_sum.begin(), col_sum.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* krow = k_log.row(i);
            const double fi = f[static_cast<size_t>(i)];
            for (int j = 0; j < L; ++j)
                col_sum[static_cast<size_t>(j)] +=
                    std::exp(krow[j] + fi - col_max[static_cast<size_t>(j)]);
        }
        for (int j = 0; j < L; ++j)
            g[static_cast<size_t>(j)] =
                log_b - (col_max[static_cast<size_t>(j)] + std::log(col_sum[static_cast<size_t>(j)]));

        // Convergence test on the true marginals, amortized.
        if (it % 5 == 0 || it == max_iters) {
            materialize();
            double row_err, col_err;
            marginal_errors(row_err, col_err);
            if (row_err < tolerance && col_err < tolerance) {
                out.converged = true;
                break;
            }
        }
    }
    if (!out.converged) {
        materialize();
        double row_err, col_err;
        marginal_errors(row_err, col_err);
        out.converged = row_err < tolerance && col_err < tolerance;
    }
    out.iterations_used = it;
    return out;
}

namespace {

double auto_epsilon(const Matrix& v) {
    const int n = v.rows();
    if (n < 2) return 1.0;
    std::vector<double> d2;
    d2.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) d2.push_back(sq_distance(v, i, v, j));
    const double med = median(std::move(d2));
    return med > 0.0 ? 0.05 * med : 1.0;
}

// Farthest-point sampling started from the point farthest from the data
// mean: depends on the point set, not on row order.
Matrix farthest_point_init(const Matrix& v, int L) {
    const int n = v.rows();
    Matrix mean(1, v.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < v.cols(); ++j) mean(0, j) += v(i, j) / n;

    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(L));
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int first = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        const double d2 = sq_distance(v, i, mean, 0);
        if (d2 > best) {
            best = d2;
            first = i;
        }
    }
    chosen.push_back(first);
    while (static_cast<int>(chosen.size()) < L) {
        const int last = chosen.back();
        int next = 0;
        double far = -1.0;
        for (int i = 0; i < n; ++i) {
            min_d2[static_cast<size_t>(i)] =
                std::min(min_d2[static_cast<size_t>(i)], sq_distance(v, i, v, last));
            if (min_d2[static_cast<size_t>(i)] > far) {
                far = min_d2[static_cast<size_t>(i)];
                next = i;
            }
        }
        chosen.push_back(next);
    }
    Matrix out(L, v.cols());
    for (int c = 0; c < L; ++c)
        std::copy(v.row(chosen[static_cast<size_t>(c)]), v.row(chosen[static_cast<size_t>(c)]) + v.cols(),
                  out.row(c));
    return out;
}

Matrix pairwise_sq_cost(const Matrix& v, const Matrix& centroids) {
    Matrix cost(v.rows(), centroids.rows());
    for (int i = 0; i < v.rows(); ++i)
        for (int c = 0; c < centroids.rows(); ++c) cost(i, c) = sq_distance(v, i, centroids, c);
    return cost;
}

// Greedy capacity-constrained assignment by descending plan mass. Pass one
// caps every cluster at floor(n/L); pass two hands the n mod L leftover
// points one extra slot each, so sizes always land in {floor, ceil}.
std::vector<int> balanced_hard_assignment(const Matrix& plan) {
    const int n = plan.rows();
    const int L = plan.cols();
    struct Cell {
        double p;
        int i, j;
    };
    std::vector<Cell> cells;
    cells.reserve(static_cast<size_t>(n) * L);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < L; ++j) cells.push_back({plan(i, j), i, j});
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        if (a.p != b.p) return a.p > b.p;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });

    std::vector<int> assign(static_cast<size_t>(n), -1);
    std::vector<int> size(static_cast<size_t>(L), 0);
    const int base = n / L;
    int unassigned = n;
    for (const Cell& c : cells) {
        if (unassigned == 0) break;
        if (assign[static_cast<size_t>(c.i)] >= 0 || size[static_cast<size_t>(c.j)] >= base) continue;
        assign[static_cast<size_t>(c.i)] = c.j;
        size[static_cast<size_t>(c.j)]++;
        --unassigned;
    }
    if (unassigned > 0) {
        for (const Cell& c : cells) {
            if (unassigned == 0) break;
            if (assign[static_cast<size_t>(c.i)] >= 0 || size[static_cast<size_t>(c.j)] > base) continue;
            assign[static_cast<size_t>(c.i)] = c.j;
            size[static_cast<size_t>(c.j)]++;
            --unassigned;
        }
    }
    return assign;
}

Matrix means_of_assignment(const Matrix& v, const std::vector<int>& assign, int L) {
    Matrix out(L, v.cols());
    std::vector<int> count(static_cast<size_t>(L), 0);
    for (int i = 0; i < v.rows(); ++i) {
        const int c = assign[static_cast<size_t>(i)];
        count[static_cast<size_t>(c)]++;
        for (int j = 0; j < v.cols(); ++j) out(c, j) += v(i, j);
    }
    for (int c = 0; c < L; ++c) {
        if (count[static_cast<size_t>(c)] == 0)
            throw ProtocolError("clustering: empty cluster after balanced assignment");
        for (int j = 0; j < v.cols(); ++j) out(c, j) /= count[static_cast<size_t>(c)];
    }
    return out;
}

} // namespace

ClusterResult balanced_cluster(const Matrix& vectors, int L, const BalancedClusterOptions& opts) {
    if (L < 1) throw ConfigError("balanced_cluster: need at least 1 cluster");
    if (vectors.rows() < L)
        throw ConfigError("balanced_cluster: " + std::to_string(vectors.rows()) +
                          " vectors cannot fill " + std::to_string(L) + " clusters");
    if (opts.lloyd_rounds < 1) throw ConfigError("balanced_cluster: need at least 1 round");

    const Matrix v = opts.normalize_features ? normalize_rows(vectors) : vectors;
    const double eps = opts.sinkhorn.epsilon > 0.0 ? opts.sinkhorn.epsilon : auto_epsilon(v);

    ClusterResult out;
    out.epsilon_used = eps;
    Matrix centroids = farthest_point_init(v, L);
    Matrix plan;
    for (int round = 0; round < opts.lloyd_rounds; ++round) {
        const Matrix cost = pairwise_sq_cost(v, centroids);
        TransportPlan tp =
            sinkhorn_plan(cost, eps, opts.sinkhorn.max_iters, opts.sinkhorn.tolerance);
        out.all_converged = out.all_converged && tp.converged;
        plan = std::move(tp.plan);

        double obj = 0.0;
        for (size_t k = 0; k < plan.size(); ++k) {
            const double p = plan.data()[k];
            obj += p * cost.data()[k];
            if (p > 0.0) obj += eps * p * (std::log(p) - 1.0);
        }
        out.objective_trace.push_back(obj);

        // Plan-weighted means, columns normalized.
        Matrix next(L, v.cols());
        std::vector<double> mass(static_cast<size_t>(L), 0.0);
        for (int i = 0; i < v.rows(); ++i) {
            const double* prow = plan.row(i);
            const double* xrow = v.row(i);
            for (int c = 0; c < L; ++c) {
                const double p = prow[c];
                if (p == 0.0) continue;
                mass[static_cast<size_t>(c)] += p;
                double* nrow = next.row(c);
                for (int j = 0; j < v.cols(); ++j) nrow[j] += p * xrow[j];
            }
        }
        for (int c = 0; c < L; ++c) {
            if (mass[static_cast<size_t>(c)] <= 0.0)
                throw ProtocolError("balanced_cluster: transport plan starved a cluster");
            for (int j = 0; j < v.cols(); ++j) next(c, j) /= mass[static_cast<size_t>(c)];
        }
        centroids = std::move(next);
    }

    out.assignment = balanced_hard_assignment(plan);
    out.centroids.centroids = means_of_assignment(v, out.assignment, L);
    out.centroids.origin = CentroidSet::Origin::kLocal;
    return out;
}

// Permutes the rows of `fresh` so that row j continues the identity of
// reference row j, via an optimal one-to-one cosine matching. A permutation
// only — the set of centroids is untouched.
static Matrix align_rows(const Matrix& fresh, const Matrix& ref) {
    if (fresh.rows() != ref.rows() || fresh.cols() != ref.cols()) return fresh;
    const int G = fresh.rows();
    Matrix score(G, G);
    for (int i = 0; i < G; ++i) {
        for (int j = 0; j < G; ++j) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int k = 0; k < fresh.cols(); ++k) {
                dot += fresh(i, k) * ref(j, k);
                na += fresh(i, k) * fresh(i, k);
                nb += ref(j, k) * ref(j, k);
            }
            const double denom = std::sqrt(na * nb);
            // shifted into [0, 2] so the matcher sees nonnegative scores
            score(i, j) = 1.0 + (denom > 0.0 ? dot / denom : 0.0);
        }
    }
    const std::vector<int> to_ref = max_score_assignment(score);
    Matrix out(G, fresh.cols());
    for (int i = 0; i < G; ++i) {
        const int j = to_ref[static_cast<size_t>(i)];
        for (int k = 0; k < fresh.cols(); ++k) out(j, k) = fresh(i, k);
    }
    return out;
}

CentroidSet aggregate_global_centroids(const std::vector<CentroidSet>& local_sets, int G,
                                       const BalancedClusterOptions& opts,
                                       const CentroidSet* align_to) {
    if (local_sets.empty()) throw ProtocolError("aggregate_global_centroids: no uploads");
    Matrix all;
    for (const CentroidSet& s : local_sets) {
        if (!all.empty() && s.dim() != all.cols())
            throw ProtocolError("aggregate_global_centroids: centroid dim mismatch");
        all = vstack(all, s.centroids);
    }
    if (all.rows() < G)
        throw ConfigError("aggregate_global_centroids: " + std::to_string(all.rows()) +
                          " local centroids cannot fill " + std::to_string(G) + " global ones");
    ClusterResult r = balanced_cluster(all, G, opts);
    CentroidSet out = std::move(r.centroids);
    out.origin = CentroidSet::Origin::kGlobal;
    out.client_id = -1;
    if (align_to) out.centroids = align_rows(out.centroids, align_to->centroids);
    return out;
}

ClusterResult kmeans_cluster(const Matrix& vectors, int L, int lloyd_rounds) {
    if (L < 1) throw ConfigError("kmeans_cluster: need at least 1 cluster");
    if (vectors.rows() < L)
        throw ConfigError("kmeans_cluster: " + std::to_string(vectors.rows()) +
                          " vectors cannot fill " + std::to_string(L) + " clusters");
    const int n = vectors.rows();
    Matrix centroids = farthest_point_init(vectors, L);
    ClusterResult out;
    out.assignment.assign(static_cast<size_t>(n), 0);
    for (int round = 0; round < lloyd_rounds; ++round) {
        double obj = 0.0;
        std::vector<int> count(static_cast<size_t>(L), 0);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_distance(vectors, i, centroids, 0);
            for (int c = 1; c < L; ++c) {
                const double d = sq_distance(vectors, i, centroids, c);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            out.assignment[static_cast<size_t>(i)] = best;
            count[static_cast<size_t>(best)]++;
            obj += bd;
        }
        out.objective_trace.push_back(obj);

        Matrix next(L, vectors.cols());
        for (int i = 0; i < n; ++i) {
            const int c = out.assignment[static_cast<size_t>(i)];
            for (int j = 0; j < vectors.cols(); ++j) next(c, j) += vectors(i, j);
        }
        for (int c = 0; c < L; ++c) {
            if (count[static_cast<size_t>(c)] > 0) {
                for (int j = 0; j < vectors.cols(); ++j) next(c, j) /= count[static_cast<size_t>(c)];
                continue;
            }
            // Reseed an emptied cluster to the point farthest from the
            // surviving centroids (deterministic; ties -> lowest index).
            int far = 0;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                double nearest = std::numeric_limits<double>::infinity();
                for (int c2 = 0; c2 < L; ++c2) {
                    if (count[static_cast<size_t>(c2)] == 0) continue;
                    nearest = std::min(nearest, sq_distance(vectors, i, centroids, c2));
                }
                if (nearest > far_d) {
                    far_d = nearest;
                    far = i;
                }
            }
            for (int j = 0; j < vectors.cols(); ++j) next(c, j) = vectors(far, j);
        }
        centroids = std::move(next);
    }
    out.centroids.centroids = std::move(centroids);
    out.centroids.origin = CentroidSet::Origin::kLocal;
    out.epsilon_used = 0.0;
    return out;
}

double anonymity_parameter(int n, int L) {
    if (L < 1) throw ConfigError("anonymity_parameter: L must be at least 1");
    return static_cast<double>(n) / L;
}

void write_centroids(const std::string& path, const CentroidSet& set, int round) {
    std::ostringstream out;
    out << "origin "
        << (set.origin == CentroidSet::Origin::kGlobal ? "global"
                                                       : "local client " + std::to_string(set.client_id))
        << '\n';
    out << "round " << round << '\n';
    out << "count " << set.count() << " dim " << set.dim() << '\n';
    for (int c = 0; c < set.count(); ++c) {
        for (int j = 0; j < set.dim(); ++j) {
            if (j) out << ' ';
            out << format_double(set.centroids(c, j));
        }
        out << '\n';
    }
    write_text_atomic(path, out.str());
}

} // namespace fedossl
