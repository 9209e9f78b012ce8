#include <cstdio>
#include <string>
#include <vector>

#include "fedossl/error.hpp"
#include "fedossl/federation.hpp"
#include "fedossl/io.hpp"
#include "fedossl/rng.hpp"

namespace fedossl {

namespace {

std::string opt_value(const std::optional<double>& v) {
    return v ? format_double(*v) : "nan";
}

std::string metrics_csv(const std::vector<RoundRecord>& records) {
    std::string out = "round,acc_all,acc_seen,acc_lu,acc_gu,acc_au,lu_gu_gap\n";
    for (const auto& r : records) {
        out += std::to_string(r.round_index);
        out += ',';
        out += format_double(r.metrics.acc_all);
        out += ',';
        out += format_double(r.metrics.acc_seen);
        out += ',';
        out += opt_value(r.metrics.acc_lu);
        out += ',';
        out += opt_value(r.metrics.acc_gu);
        out += ',';
        out += opt_value(r.metrics.acc_au);
        out += ',';
        out += opt_value(r.metrics.lu_gu_gap);
        out += '\n';
    }
    return out;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "round,epoch,batch,L_s,L_u,R,L_ce,L_cluster,total\n";
    for (const auto& r : rows) {
        out += std::to_string(r.round);
        out += ',';
        out += std::to_string(r.epoch);
        out += ',';
        out += std::to_string(r.batch);
        for (double v : {r.L_s, r.L_u, r.R, r.L_ce, r.L_cluster, r.total}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::string pad3(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", v);
    return buf;
}

std::string describe(const MetricsReport& m) {
    std::string out = "acc_all=" + format_double(m.acc_all);
    out += " acc_seen=" + format_double(m.acc_seen);
    out += " acc_lu=" + opt_value(m.acc_lu);
    out += " acc_gu=" + opt_value(m.acc_gu);
    out += " acc_au=" + opt_value(m.acc_au);
    out += " lu_gu_gap=" + opt_value(m.lu_gu_gap);
    return out;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                const std::function<void(const RoundRecord&)>& on_round) {
    validate_config(cfg);
    const FederationOptions opt = make_federation_options(cfg);

    const Dataset ds = generate_synthetic(cfg.data.classes, cfg.data.dims, cfg.data.per_class,
                                          cfg.data.separation, cfg.seed);
    PartitionParams pp;
    pp.seen_fraction = cfg.data.seen_fraction;
    pp.labeled_fraction = cfg.data.labeled_fraction;
    pp.clients = cfg.data.clients;
    pp.gu_per_client = cfg.data.gu_per_client;
    pp.lu_per_client = cfg.data.lu_per_client;
    pp.dirichlet_alpha = cfg.data.dirichlet_alpha;

    ExperimentResult result;
    result.partition = partition_open_world(ds, pp, cfg.seed);

    std::vector<int> widths;
    widths.push_back(cfg.data.dims);
    widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    widths.push_back(cfg.model.feature_dim);
    Rng init_rng(derive_seed(cfg.seed, kSeedModelInit));

    ServerState server;
    server.global_model = init_model(widths, cfg.data.classes, init_rng);

    std::vector<ClientState> clients;
    clients.reserve(result.partition.shards.size());
    for (const ClientShard& shard : result.partition.shards) {
        ClientState st;
        st.client_id = shard.client_id;
        st.model = server.global_model;
        st.optimizer = make_optimizer(st.model, opt.learning_rate, opt.momentum, opt.weight_decay);
        st.pseudo_counts = PseudoClassCounts(cfg.data.classes, cfg.objective.decay);
        st.shard = shard;
        clients.push_back(std::move(st));
    }

    const bool emit = !out_dir.empty();
    std::string centroid_dir;
    if (emit) {
        ensure_directory(out_dir);
        centroid_dir = out_dir + "/centroids";
        ensure_directory(centroid_dir);
        write_taxonomy(out_dir + "/taxonomy.txt", result.partition.taxonomy);
    }

    std::vector<std::vector<TrainLogRow>> logs(clients.size());
    std::string privacy = "round,client,n,L,anonymity\n";
    std::string matching = "round,predicted_label,unseen_class\n";

    auto flush_tables = [&] {
        write_text_atomic(out_dir + "/metrics.csv", metrics_csv(result.records));
        write_text_atomic(out_dir + "/privacy.csv", privacy);
        write_text_atomic(out_dir + "/matching.csv", matching);
        for (std::size_t i = 0; i < logs.size(); ++i)
            write_text_atomic(out_dir + "/client_" + std::to_string(i) + "_train.csv",
                              train_log_csv(logs[i]));
    };

    for (int r = 1; r <= cfg.federation.rounds; ++r) {
        RoundRecord rec = run_round(server, clients, opt, result.partition.test,
                                    result.partition.taxonomy, &logs);
        if (emit) {
            for (int id : rec.sampled) {
                const ClientState& st = clients[static_cast<std::size_t>(id)];
                write_centroids(centroid_dir + "/round_" + pad3(r) + "_client_" +
                                    std::to_string(id) + ".txt",
                                *st.last_local_centroids, r);
                privacy += std::to_string(r) + ',' + std::to_string(id) + ',' +
                           std::to_string(st.shard.n()) + ',' +
                           std::to_string(opt.local_centroids) + ',' +
                           format_double(anonymity_parameter(st.shard.n(), opt.local_centroids)) +
                           '\n';
            }
            write_centroids(centroid_dir + "/round_" + pad3(r) + "_global.txt",
                            *server.global_centroids, r);
            for (const auto& [label, cls] : rec.metrics.matching)
                matching += std::to_string(r) + ',' + std::to_string(label) + ',' +
                            std::to_string(cls) + '\n';
        }
        result.records.push_back(std::move(rec));
        if (emit) flush_tables(); // refreshed every round, atomically
        if (on_round) on_round(result.records.back());
    }

    result.final_model = server.global_model;
    if (!result.records.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < result.records.size(); ++i)
            if (result.records[i].metrics.acc_all > result.records[best].metrics.acc_all) best = i;
        result.best_round = result.records[best].round_index;
    }

    if (emit) {
        flush_tables();
        save_model(out_dir + "/model.ckpt", result.final_model);
        std::string summary;
        summary += "rounds: " + std::to_string(cfg.federation.rounds) + '\n';
        summary += "seed: " + std::to_string(cfg.seed) + '\n';
        summary += "best_round: " + std::to_string(result.best_round) + '\n';
        if (!result.records.empty()) {
            const RoundRecord& best =
                result.records[static_cast<std::size_t>(result.best_round - 1)];
            summary += "best: " + describe(best.metrics) + '\n';
            summary += "final: " + describe(result.records.back().metrics) + '\n';
            summary += "best_matching:\n";
            for (const auto& [label, cls] : best.metrics.matching)
                summary += "  label " + std::to_string(label) + " -> class " +
                           std::to_string(cls) + '\n';
        }
        write_text_atomic(out_dir + "/summary.txt", summary);
        save_config(cfg, out_dir + "/config.json");
    }
    return result;
}

} // namespace fedossl
