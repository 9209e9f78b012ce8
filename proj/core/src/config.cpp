#include "fedossl/config.hpp"

#include <algorithm>
#include <cctype>
#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"

#include "fedossl/error.hpp"
#include "fedossl/io.hpp"

namespace fedossl {

using nlohmann::ordered_json;

const std::vector<std::string> kPresetNames = {"full", "minus_R", "minus_R_minus_ce", "base"};

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
    if (name == "full") return;
    if (name == "minus_R") {
        cfg.objective.beta = 0.0;
        return;
    }
    if (name == "minus_R_minus_ce") {
        cfg.objective.beta = 0.0;
        cfg.objective.calibration_ce = false;
        return;
    }
    if (name == "base") {
        cfg.objective.beta = 0.0;
        cfg.objective.gamma = 0.0;
        return;
    }
    std::string known;
    for (const auto& p : kPresetNames) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("unknown preset '" + name + "' (known presets: " + known + ")");
}

namespace {

struct Diagnostics {
    std::vector<std::string> problems;

    void add(const std::string& path, const std::string& msg) {
        problems.push_back(path + ": " + msg);
    }
    void raise_if_any(const std::string& origin) const {
        if (problems.empty()) return;
        std::string msg = "invalid configuration (" + origin + "):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
};

void check_keys(const ordered_json& j, const std::string& prefix,
                std::initializer_list<const char*> allowed, Diagnostics& diag) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : j.items())
        if (ok.count(item.key()) == 0) diag.add(prefix + item.key(), "unknown key");
}

void read_double(const ordered_json& j, const char* key, double& out, const std::string& prefix,
                 Diagnostics& diag) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) {
        diag.add(prefix + key, "expected a number");
        return;
    }
    out = v.get<double>();
}

void read_int(const ordered_json& j, const char* key, int& out, const std::string& prefix,
              Diagnostics& diag) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer()) {
        diag.add(prefix + key, "expected an integer");
        return;
    }
    out = v.get<int>();
}

void read_bool(const ordered_json& j, const char* key, bool& out, const std::string& prefix,
               Diagnostics& diag) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_boolean()) {
        diag.add(prefix + key, "expected true or false");
        return;
    }
    out = v.get<bool>();
}

void read_seed(const ordered_json& j, const char* key, std::uint64_t& out, Diagnostics& diag) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
        return;
    }
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v.get<std::int64_t>());
        return;
    }
    diag.add(key, "expected a nonnegative integer");
}

void read_int_list(const ordered_json& j, const char* key, std::vector<int>& out,
                   const std::string& prefix, Diagnostics& diag) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array()) {
        diag.add(prefix + key, "expected an array of integers");
        return;
    }
    std::vector<int> vals;
    for (const auto& e : v) {
        if (!e.is_number_integer()) {
            diag.add(prefix + key, "expected an array of integers");
            return;
        }
        vals.push_back(e.get<int>());
    }
    out = std::move(vals);
}

void collect_problems(const ExperimentConfig& c, Diagnostics& d) {
    if (c.data.classes < 4) d.add("data.classes", "need at least 4 classes");
    if (c.data.dims < 2) d.add("data.dims", "need at least 2 dimensions");
    if (c.data.per_class < 1) d.add("data.per_class", "need at least 1 example per class");
    if (!(c.data.seen_fraction > 0.0 && c.data.seen_fraction <= 1.0))
        d.add("data.seen_fraction", "must lie in (0, 1]");
    if (!(c.data.labeled_fraction > 0.0 && c.data.labeled_fraction <= 1.0))
        d.add("data.labeled_fraction", "must lie in (0, 1]");
    if (c.data.clients < 1) d.add("data.clients", "need at least 1 client");
    if (c.data.gu_per_client < 0) d.add("data.gu_per_client", "must be nonnegative");
    if (c.data.lu_per_client < 0) d.add("data.lu_per_client", "must be nonnegative");
    if (!(c.data.separation > 0.0)) d.add("data.separation", "must be positive");
    if (c.data.dirichlet_alpha < 0.0) d.add("data.dirichlet_alpha", "must be nonnegative");

    for (int h : c.model.hidden)
        if (h < 1) {
            d.add("model.hidden", "layer widths must be positive");
            break;
        }
    if (c.model.feature_dim < 1) d.add("model.feature_dim", "must be positive");
    const int extractor_layers = static_cast<int>(c.model.hidden.size()) + 1;
    if (c.model.freeze_below < 0 || c.model.freeze_below > extractor_layers)
        d.add("model.freeze_below", "must lie in [0, " + std::to_string(extractor_layers) +
                                        "] for this extractor");

    if (c.objective.alpha < 0.0) d.add("objective.alpha", "must be nonnegative");
    if (c.objective.beta < 0.0) d.add("objective.beta", "must be nonnegative");
    if (c.objective.gamma < 0.0) d.add("objective.gamma", "must be nonnegative");
    if (!(c.objective.tau > 0.0 && c.objective.tau <= 1.0))
        d.add("objective.tau", "must lie in (0, 1]");
    if (!(c.objective.temperature > 0.0)) d.add("objective.temperature", "must be positive");
    if (!(c.objective.decay >= 0.0 && c.objective.decay < 1.0))
        d.add("objective.decay", "must lie in [0, 1)");

    if (c.clustering.local_centroids < 1) d.add("clustering.local_centroids", "must be positive");
    if (c.clustering.global_centroids < 0)
        d.add("clustering.global_centroids", "must be nonnegative (0 sizes automatically)");
    const bool calibration_on =
        c.objective.gamma > 0.0 && (c.objective.calibration_ce || c.objective.calibration_cluster);
    if (calibration_on && c.clustering.global_centroids > 0 &&
        c.clustering.global_centroids != c.data.classes)
        d.add("clustering.global_centroids",
              "calibration needs one global centroid per class (data.classes = " +
                  std::to_string(c.data.classes) + "); use 0 to size automatically");
    if (c.clustering.lloyd_rounds < 1) d.add("clustering.lloyd_rounds", "must be positive");
    if (c.clustering.sinkhorn_max_iters < 1)
        d.add("clustering.sinkhorn_max_iters", "must be positive");
    if (!(c.clustering.sinkhorn_tolerance > 0.0))
        d.add("clustering.sinkhorn_tolerance", "must be positive");

    if (c.federation.rounds < 0) d.add("federation.rounds", "must be nonnegative");
    if (c.federation.local_epochs < 1) d.add("federation.local_epochs", "must be positive");
    if (c.federation.batch_size < 1) d.add("federation.batch_size", "must be positive");
    if (!(c.federation.participation > 0.0 && c.federation.participation <= 1.0))
        d.add("federation.participation", "must lie in (0, 1]");
    if (c.federation.learning_rate < 0.0) d.add("federation.learning_rate", "must be nonnegative");
    if (!(c.federation.momentum >= 0.0 && c.federation.momentum < 1.0))
        d.add("federation.momentum", "must lie in [0, 1)");
    if (c.federation.weight_decay < 0.0) d.add("federation.weight_decay", "must be nonnegative");
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char ch) { return std::isspace(ch) != 0; });
}

} // namespace

void validate_config(const ExperimentConfig& cfg) {
    Diagnostics diag;
    collect_problems(cfg, diag);
    diag.raise_if_any("resolved settings");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    Diagnostics diag;
    if (!blank(text)) {
        ordered_json j;
        try {
            j = ordered_json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("invalid configuration (" + origin + "): not valid JSON: " +
                              e.what());
        }
        if (!j.is_object()) {
            throw ConfigError("invalid configuration (" + origin +
                              "): top level must be a JSON object");
        }
        check_keys(j, "",
                   {"data", "model", "objective", "clustering", "federation", "seed", "out_dir"},
                   diag);

        auto block = [&](const char* name) -> ordered_json {
            if (!j.contains(name)) return ordered_json::object();
            const auto& v = j.at(name);
            if (!v.is_object()) {
                diag.add(name, "expected an object");
                return ordered_json::object();
            }
            return v;
        };

        {
            const ordered_json b = block("data");
            check_keys(b, "data.",
                       {"classes", "dims", "per_class", "seen_fraction", "labeled_fraction",
                        "clients", "gu_per_client", "lu_per_client", "separation",
                        "dirichlet_alpha"},
                       diag);
            read_int(b, "classes", cfg.data.classes, "data.", diag);
            read_int(b, "dims", cfg.data.dims, "data.", diag);
            read_int(b, "per_class", cfg.data.per_class, "data.", diag);
            read_double(b, "seen_fraction", cfg.data.seen_fraction, "data.", diag);
            read_double(b, "labeled_fraction", cfg.data.labeled_fraction, "data.", diag);
            read_int(b, "clients", cfg.data.clients, "data.", diag);
            read_int(b, "gu_per_client", cfg.data.gu_per_client, "data.", diag);
            read_int(b, "lu_per_client", cfg.data.lu_per_client, "data.", diag);
            read_double(b, "separation", cfg.data.separation, "data.", diag);
            read_double(b, "dirichlet_alpha", cfg.data.dirichlet_alpha, "data.", diag);
        }
        {
            const ordered_json b = block("model");
            check_keys(b, "model.", {"hidden", "feature_dim", "freeze_below"}, diag);
            read_int_list(b, "hidden", cfg.model.hidden, "model.", diag);
            read_int(b, "feature_dim", cfg.model.feature_dim, "model.", diag);
            read_int(b, "freeze_below", cfg.model.freeze_below, "model.", diag);
        }
        {
            const ordered_json b = block("objective");
            check_keys(b, "objective.",
                       {"alpha", "beta", "gamma", "tau", "temperature", "decay", "rho_inverse",
                        "stop_gradient_on_target", "calibration_ce", "calibration_cluster"},
                       diag);
            read_double(b, "alpha", cfg.objective.alpha, "objective.", diag);
            read_double(b, "beta", cfg.objective.beta, "objective.", diag);
            read_double(b, "gamma", cfg.objective.gamma, "objective.", diag);
            read_double(b, "tau", cfg.objective.tau, "objective.", diag);
            read_double(b, "temperature", cfg.objective.temperature, "objective.", diag);
            read_double(b, "decay", cfg.objective.decay, "objective.", diag);
            read_bool(b, "rho_inverse", cfg.objective.rho_inverse, "objective.", diag);
            read_bool(b, "stop_gradient_on_target", cfg.objective.stop_gradient_on_target,
                      "objective.", diag);
            read_bool(b, "calibration_ce", cfg.objective.calibration_ce, "objective.", diag);
            read_bool(b, "calibration_cluster", cfg.objective.calibration_cluster, "objective.",
                      diag);
        }
        {
            const ordered_json b = block("clustering");
            check_keys(b, "clustering.",
                       {"local_centroids", "global_centroids", "epsilon", "lloyd_rounds",
                        "sinkhorn_max_iters", "sinkhorn_tolerance", "kmeans_fallback",
                        "normalize_features"},
                       diag);
            read_int(b, "local_centroids", cfg.clustering.local_centroids, "clustering.", diag);
            read_int(b, "global_centroids", cfg.clustering.global_centroids, "clustering.", diag);
            read_double(b, "epsilon", cfg.clustering.epsilon, "clustering.", diag);
            read_int(b, "lloyd_rounds", cfg.clustering.lloyd_rounds, "clustering.", diag);
            read_int(b, "sinkhorn_max_iters", cfg.clustering.sinkhorn_max_iters, "clustering.",
                     diag);
            read_double(b, "sinkhorn_tolerance", cfg.clustering.sinkhorn_tolerance, "clustering.",
                        diag);
            read_bool(b, "kmeans_fallback", cfg.clustering.kmeans_fallback, "clustering.", diag);
            read_bool(b, "normalize_features", cfg.clustering.normalize_features, "clustering.",
                      diag);
        }
        {
            const ordered_json b = block("federation");
            check_keys(b, "federation.",
                       {"rounds", "local_epochs", "batch_size", "participation", "learning_rate",
                        "momentum", "weight_decay"},
                       diag);
            read_int(b, "rounds", cfg.federation.rounds, "federation.", diag);
            read_int(b, "local_epochs", cfg.federation.local_epochs, "federation.", diag);
            read_int(b, "batch_size", cfg.federation.batch_size, "federation.", diag);
            read_double(b, "participation", cfg.federation.participation, "federation.", diag);
            read_double(b, "learning_rate", cfg.federation.learning_rate, "federation.", diag);
            read_double(b, "momentum", cfg.federation.momentum, "federation.", diag);
            read_double(b, "weight_decay", cfg.federation.weight_decay, "federation.", diag);
        }
        read_seed(j, "seed", cfg.seed, diag);
        if (j.contains("out_dir")) {
            if (j.at("out_dir").is_string())
                cfg.out_dir = j.at("out_dir").get<std::string>();
            else
                diag.add("out_dir", "expected a string");
        }
    }
    collect_problems(cfg, diag);
    diag.raise_if_any(origin);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    return parse_config(read_text(path), path);
}

std::string config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    j["data"] = {{"classes", c.data.classes},
                 {"dims", c.data.dims},
                 {"per_class", c.data.per_class},
                 {"seen_fraction", c.data.seen_fraction},
                 {"labeled_fraction", c.data.labeled_fraction},
                 {"clients", c.data.clients},
                 {"gu_per_client", c.data.gu_per_client},
                 {"lu_per_client", c.data.lu_per_client},
                 {"separation", c.data.separation},
                 {"dirichlet_alpha", c.data.dirichlet_alpha}};
    j["model"] = {{"hidden", c.model.hidden},
                  {"feature_dim", c.model.feature_dim},
                  {"freeze_below", c.model.freeze_below}};
    j["objective"] = {{"alpha", c.objective.alpha},
                      {"beta", c.objective.beta},
                      {"gamma", c.objective.gamma},
                      {"tau", c.objective.tau},
                      {"temperature", c.objective.temperature},
                      {"decay", c.objective.decay},
                      {"rho_inverse", c.objective.rho_inverse},
                      {"stop_gradient_on_target", c.objective.stop_gradient_on_target},
                      {"calibration_ce", c.objective.calibration_ce},
                      {"calibration_cluster", c.objective.calibration_cluster}};
    j["clustering"] = {{"local_centroids", c.clustering.local_centroids},
                       {"global_centroids", c.clustering.global_centroids},
                       {"epsilon", c.clustering.epsilon},
                       {"lloyd_rounds", c.clustering.lloyd_rounds},
                       {"sinkhorn_max_iters", c.clustering.sinkhorn_max_iters},
                       {"sinkhorn_tolerance", c.clustering.sinkhorn_tolerance},
                       {"kmeans_fallback", c.clustering.kmeans_fallback},
                       {"normalize_features", c.clustering.normalize_features}};
    j["federation"] = {{"rounds", c.federation.rounds},
                       {"local_epochs", c.federation.local_epochs},
                       {"batch_size", c.federation.batch_size},
                       {"participation", c.federation.participation},
                       {"learning_rate", c.federation.learning_rate},
                       {"momentum", c.federation.momentum},
                       {"weight_decay", c.federation.weight_decay}};
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    return j.dump(2);
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    write_text_atomic(path, config_to_json(cfg) + "\n");
}

} // namespace fedossl
