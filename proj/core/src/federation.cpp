#include "fedossl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "fedossl/error.hpp"
#include "fedossl/rng.hpp"

namespace fedossl {

FederationOptions make_federation_options(const ExperimentConfig& cfg) {
    FederationOptions opt;
    opt.local_epochs = cfg.federation.local_epochs;
    opt.batch_size = cfg.federation.batch_size;
    opt.participation = cfg.federation.participation;
    opt.learning_rate = cfg.federation.learning_rate;
    opt.momentum = cfg.federation.momentum;
    opt.weight_decay = cfg.federation.weight_decay;
    opt.objective.weights.alpha = cfg.objective.alpha;
    opt.objective.weights.beta = cfg.objective.beta;
    opt.objective.weights.gamma = cfg.objective.gamma;
    opt.objective.weights.tau = cfg.objective.tau;
    opt.objective.temperature = cfg.objective.temperature;
    opt.objective.rho_inverse = cfg.objective.rho_inverse;
    opt.objective.stop_gradient_on_target = cfg.objective.stop_gradient_on_target;
    opt.objective.calibration_ce_enabled = cfg.objective.calibration_ce;
    opt.objective.calibration_cluster_enabled = cfg.objective.calibration_cluster;
    opt.objective.freeze_extractor_below = cfg.model.freeze_below;
    opt.local_centroids = cfg.clustering.local_centroids;
    opt.global_centroids = cfg.clustering.global_centroids;
    opt.clustering.sinkhorn.epsilon = cfg.clustering.epsilon;
    opt.clustering.sinkhorn.max_iters = cfg.clustering.sinkhorn_max_iters;
    opt.clustering.sinkhorn.tolerance = cfg.clustering.sinkhorn_tolerance;
    opt.clustering.lloyd_rounds = cfg.clustering.lloyd_rounds;
    opt.clustering.normalize_features = cfg.clustering.normalize_features;
    opt.kmeans_fallback = cfg.clustering.kmeans_fallback;
    opt.seed = cfg.seed;
    return opt;
}

std::vector<int> sample_clients(int count, double participation, std::uint64_t round_seed) {
    if (count <= 0) throw ConfigError("sample_clients: need at least one client");
    if (!(participation > 0.0 && participation <= 1.0))
        throw ConfigError("sample_clients: participation must lie in (0, 1], got " +
                          std::to_string(participation));
    int take = static_cast<int>(std::ceil(participation * count));
    take = std::clamp(take, 1, count);

    std::vector<int> ids(static_cast<std::size_t>(count));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(round_seed);
    for (int i = 0; i < take; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(count - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(take));
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

void accumulate(MeanLosses& acc, const ObjectiveResult& r) {
    acc.L_s += r.L_s;
    acc.L_u += r.L_u;
    acc.R += r.R;
    acc.L_ce += r.L_ce;
    acc.L_cluster += r.L_cluster;
    acc.total += r.total;
    ++acc.batches;
}

void to_means(MeanLosses& acc) {
    if (acc.batches == 0) return;
    const double inv = 1.0 / acc.batches;
    acc.L_s *= inv;
    acc.L_u *= inv;
    acc.R *= inv;
    acc.L_ce *= inv;
    acc.L_cluster *= inv;
    acc.total *= inv;
}

} // namespace

ClientUpdateResult client_update(ClientState& st, const Model& global_model,
                                 const CentroidSet* global_centroids,
                                 const FederationOptions& opt, int round,
                                 std::vector<TrainLogRow>* log) {
    if (opt.local_epochs < 1) throw ConfigError("client_update: local_epochs must be >= 1");
    if (opt.batch_size < 1) throw ConfigError("client_update: batch_size must be >= 1");

    st.model = global_model;
    st.optimizer = make_optimizer(st.model, opt.learning_rate, opt.momentum, opt.weight_decay);
    st.optimizer.frozen_extractor_layers = opt.objective.freeze_extractor_below;

    const LabeledSet& lab = st.shard.labeled;
    const Matrix& unl = st.shard.unlabeled;
    const int nl = lab.X.rows();
    const int nu = unl.rows();
    const Matrix* centroids = global_centroids ? &global_centroids->centroids : nullptr;

    Rng order_rng(derive_seed(opt.seed, kSeedBatchOrder, static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(st.client_id)));
    Rng pair_rng(derive_seed(opt.seed, kSeedPairing, static_cast<std::uint64_t>(round),
                             static_cast<std::uint64_t>(st.client_id)));

    MeanLosses acc;
    std::vector<int> u_order(static_cast<std::size_t>(nu));
    std::vector<int> l_order(static_cast<std::size_t>(nl));
    for (int epoch = 1; epoch <= opt.local_epochs; ++epoch) {
        std::iota(u_order.begin(), u_order.end(), 0);
        std::iota(l_order.begin(), l_order.end(), 0);
        order_rng.shuffle(u_order);
        order_rng.shuffle(l_order);

        // Unlabeled data drives the batch count; when a shard has none, the
        // labeled rows do.
        const int driver = nu > 0 ? nu : nl;
        if (driver == 0) break;
        const int steps = (driver + opt.batch_size - 1) / opt.batch_size;
        for (int s = 0; s < steps; ++s) {
            std::vector<int> rows_u;
            if (nu > 0) {
                const int lo = s * opt.batch_size;
                const int hi = std::min(nu, lo + opt.batch_size);
                rows_u.assign(u_order.begin() + lo, u_order.begin() + hi);
            }
            std::vector<int> rows_l;
            if (nl > 0) {
                if (nu > 0) {
                    // Labeled rows ride along as a cycling window so every
                    // batch carries supervision even when labels are scarce.
                    const int k = std::min(opt.batch_size, nl);
                    const int start = (s * k) % nl;
                    rows_l.reserve(static_cast<std::size_t>(k));
                    for (int t = 0; t < k; ++t)
                        rows_l.push_back(l_order[static_cast<std::size_t>((start + t) % nl)]);
                } else {
                    const int lo = s * opt.batch_size;
                    const int hi = std::min(nl, lo + opt.batch_size);
                    rows_l.assign(l_order.begin() + lo, l_order.begin() + hi);
                }
            }

            const Matrix bX = rows_l.empty() ? Matrix() : gather_rows(lab.X, rows_l);
            std::vector<int> by(rows_l.size());
            for (std::size_t t = 0; t < rows_l.size(); ++t)
                by[t] = lab.y[static_cast<std::size_t>(rows_l[t])];
            const Matrix uX = rows_u.empty() ? Matrix() : gather_rows(unl, rows_u);

            const ObjectiveResult r = total_objective(st.model, bX, by, uX, st.pseudo_counts,
                                                      centroids, opt.objective, pair_rng);
            sgd_step(st.model, r.grad, st.optimizer);
            if (!rows_u.empty()) {
                const std::vector<int> preds(
                    r.combined_argmax.begin() + static_cast<std::ptrdiff_t>(rows_l.size()),
                    r.combined_argmax.end());
                st.pseudo_counts = update_pseudo_counts(st.pseudo_counts, preds);
            }
            accumulate(acc, r);
            if (log)
                log->push_back({round, epoch, s, r.L_s, r.L_u, r.R, r.L_ce, r.L_cluster, r.total});
        }
    }
    to_means(acc);

    const Matrix all = vstack(lab.X, unl);
    if (all.rows() == 0)
        throw DataError("client " + std::to_string(st.client_id) + " has no data to cluster");
    const Matrix feats = forward(st.model, all).features;
    const ClusterResult cr =
        opt.kmeans_fallback ? kmeans_cluster(feats, opt.local_centroids, opt.clustering.lloyd_rounds)
                            : balanced_cluster(feats, opt.local_centroids, opt.clustering);

    CentroidSet cs = cr.centroids;
    cs.origin = CentroidSet::Origin::kLocal;
    cs.client_id = st.client_id;
    st.last_local_centroids = cs;
    return {std::move(cs), acc};
}

Model aggregate_models(const std::vector<ModelUpload>& uploads) {
    if (uploads.empty()) throw ProtocolError("aggregate_models: no uploads");

    std::vector<const ModelUpload*> order;
    order.reserve(uploads.size());
    for (const auto& u : uploads) order.push_back(&u);
    std::sort(order.begin(), order.end(),
              [](const ModelUpload* a, const ModelUpload* b) { return a->client_id < b->client_id; });

    const Model& ref = order.front()->model;
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && order[i]->client_id == order[i - 1]->client_id)
            throw ProtocolError("aggregate_models: duplicate upload from client " +
                                std::to_string(order[i]->client_id));
        if (!order[i]->model.same_shape(ref))
            throw ProtocolError("aggregate_models: upload from client " +
                                std::to_string(order[i]->client_id) +
                                " has a different model shape");
        if (order[i]->examples < 0)
            throw ProtocolError("aggregate_models: negative example count from client " +
                                std::to_string(order[i]->client_id));
        total += static_cast<double>(order[i]->examples);
    }
    if (total <= 0.0) throw ProtocolError("aggregate_models: uploads cover zero examples");

    std::vector<double> weight(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        weight[i] = static_cast<double>(order[i]->examples) / total;

    Model out = ref;
    const auto dst = param_list(out);
    const auto base = param_list(ref);
    std::vector<std::vector<const Matrix*>> params;
    params.reserve(order.size());
    for (const ModelUpload* u : order) params.push_back(param_list(u->model));

    // Averaged as ref + sum_i w_i (theta_i - ref): when every upload equals
    // ref the correction is exactly zero, so unchanged models survive the
    // round bitwise (the zero-learning-rate fixed point).
    for (std::size_t p = 0; p < dst.size(); ++p) {
        Matrix& out_m = *dst[p];
        const Matrix& ref_m = *base[p];
        for (int i = 0; i < out_m.rows(); ++i) {
            for (int j = 0; j < out_m.cols(); ++j) {
                double corr = 0.0;
                for (std::size_t c = 0; c < params.size(); ++c)
                    corr += weight[c] * ((*params[c][p])(i, j) - ref_m(i, j));
                out_m(i, j) = corr == 0.0 ? ref_m(i, j) : ref_m(i, j) + corr;
            }
        }
    }
    return out;
}

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const FederationOptions& opt, const TestSet& test,
                      const ClassTaxonomy& taxonomy,
                      std::vector<std::vector<TrainLogRow>>* logs) {
    if (clients.empty()) throw ConfigError("run_round: no clients");
    for (std::size_t i = 0; i < clients.size(); ++i)
        if (clients[i].client_id != static_cast<int>(i))
            throw ProtocolError("run_round: clients must be stored in id order");
    if (logs && logs->size() != clients.size())
        throw ProtocolError("run_round: expected one training log per client");

    const auto start = std::chrono::steady_clock::now();
    const int round = server.rounds_done + 1;
    RoundRecord rec;
    rec.round_index = round;
    rec.sampled =
        sample_clients(static_cast<int>(clients.size()), opt.participation,
                       derive_seed(opt.seed, kSeedClientSample, static_cast<std::uint64_t>(round)));

    const CentroidSet* gc = server.global_centroids ? &*server.global_centroids : nullptr;
    std::vector<ModelUpload> model_uploads;
    std::vector<CentroidSet> centroid_uploads;
    for (int id : rec.sampled) {
        ClientState& st = clients[static_cast<std::size_t>(id)];
        ClientUpdateResult res = client_update(st, server.global_model, gc, opt, round,
                                               logs ? &(*logs)[static_cast<std::size_t>(id)]
                                                    : nullptr);
        model_uploads.push_back({id, st.model, static_cast<long long>(st.shard.n())});
        centroid_uploads.push_back(std::move(res.centroids));
        rec.client_losses.emplace_back(id, res.losses);
    }

    // Both aggregates are computed before the server commits either, so a
    // failure anywhere leaves the previous global state intact.
    Model next_model = aggregate_models(model_uploads);
    const int G = opt.global_centroids > 0 ? opt.global_centroids : next_model.num_classes();
    CentroidSet next_centroids = aggregate_global_centroids(centroid_uploads, G, opt.clustering,
                                                            gc);
    server.global_model = std::move(next_model);
    server.global_centroids = std::move(next_centroids);
    server.rounds_done = round;

    rec.metrics = metrics(confusion(server.global_model, test), taxonomy);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

} // namespace fedossl
