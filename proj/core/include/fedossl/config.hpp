#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedossl {

// Desk-scale defaults throughout: 4 clients training a small MLP on a
// 14-class synthetic benchmark finish a full run in minutes. Larger shapes
// (more clients, partial participation, wider nets) stay expressible.

struct DataConfig {
    int classes = 14;
    int dims = 16;
    int per_class = 600;
    double seen_fraction = 0.6;    // share of classes with labels somewhere
    double labeled_fraction = 0.5; // labeled share within each seen-class chunk
    int clients = 4;
    int gu_per_client = 1; // unseen classes exclusive to each client
    int lu_per_client = 2; // unseen classes shared with other clients
    double separation = 6.0;
    double dirichlet_alpha = 0.0; // 0: even seen-class split, >0: skewed
};

struct ModelConfig {
    std::vector<int> hidden = {64, 64};
    int feature_dim = 16;
    int freeze_below = 0; // extractor layers < k stay at their initial values
};

struct ObjectiveConfig {
    double alpha = 1.0; // pairwise term
    double beta = 1.0;  // uncertainty term
    double gamma = 1.0; // calibration terms
    double tau = 0.5;
    double temperature = 0.1;
    double decay = 0.9; // pseudo-count moving average
    bool rho_inverse = false;
    bool stop_gradient_on_target = false;
    bool calibration_ce = true;
    bool calibration_cluster = true;
};

struct ClusteringConfig {
    int local_centroids = 32;
    int global_centroids = 0; // 0: one per class
    double epsilon = 0.0;     // <= 0: scale from median pairwise distance
    int lloyd_rounds = 10;
    int sinkhorn_max_iters = 500;
    double sinkhorn_tolerance = 1e-6;
    bool kmeans_fallback = false; // plain k-means instead of balanced clusters
    bool normalize_features = false;
};

struct FederationConfig {
    int rounds = 30;
    int local_epochs = 5;
    int batch_size = 64;
    double participation = 1.0;
    double learning_rate = 0.05;
    double momentum = 0.9;
    // Mild: strong decay (with momentum amplifying it) tears down an unseen
    // class's output column whenever its reinforcement hiccups for a round,
    // which shows up as whole-partition accuracy collapses mid-training.
    double weight_decay = 5e-4;
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    ObjectiveConfig objective;
    ClusteringConfig clustering;
    FederationConfig federation;
    std::uint64_t seed = 1;
    std::string out_dir;
};

// Ablation presets. They touch only the loss-term switches:
//   full            — everything on (the default weights)
//   minus_R         — uncertainty weight beta = 0
//   minus_R_minus_ce — additionally drops the calibration cross-entropy,
//                      leaving only the cluster-alignment calibration term
//   base            — beta = 0 and gamma = 0: plain federated SSL
extern const std::vector<std::string> kPresetNames;
void apply_preset(ExperimentConfig& cfg, const std::string& name);

// Every constraint violated is reported in one exception message, each line
// prefixed with the offending key path.
void validate_config(const ExperimentConfig& cfg);

// JSON on disk. An empty (or whitespace-only) file means "all defaults".
// Unknown keys, wrong types, and constraint violations are all collected
// into a single diagnostic.
ExperimentConfig parse_config(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::string& path);

} // namespace fedossl
