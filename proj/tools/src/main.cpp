// Experiment runner: `run` trains one configuration, `sweep` fans a config
// out over a parameter grid, `compare` tabulates finished runs side by side.
// Exit codes: 0 success, 1 configuration problem, 2 runtime failure.

#include <array>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedossl/config.hpp"
#include "fedossl/error.hpp"
#include "fedossl/federation.hpp"
#include "fedossl/io.hpp"
#include "fedossl/numerics.hpp"

using namespace fedossl;

namespace {

constexpr const char* kMetricsHeader = "round,acc_all,acc_seen,acc_lu,acc_gu,acc_au,lu_gu_gap";
constexpr int kMetricsFields = 7;

std::string out_root() {
    const char* env = std::getenv("FEDOSSL_OUT");
    return env != nullptr && *env != '\0' ? env : "runs";
}

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == '/' || c == '\\' || c == ' ' || c == ',') c = '_';
    return s;
}

// Overrides one key (e.g. "objective.beta") by editing the resolved JSON and
// re-parsing it, so overrides face exactly the file-loading validation.
ExperimentConfig apply_override(const ExperimentConfig& cfg, const std::string& key,
                                const std::string& value) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(config_to_json(cfg));
    nlohmann::ordered_json parsed;
    try {
        parsed = nlohmann::ordered_json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
        parsed = value; // bare words are strings
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos)
        j[key] = parsed;
    else
        j[key.substr(0, dot)][key.substr(dot + 1)] = parsed;
    return parse_config(j.dump(), "override " + key + "=" + value);
}

void print_progress(const RoundRecord& r, int rounds) {
    std::cerr << "round " << r.round_index << "/" << rounds << "  acc_all=" << r.metrics.acc_all
              << "  acc_seen=" << r.metrics.acc_seen;
    if (r.metrics.acc_au) std::cerr << "  acc_au=" << *r.metrics.acc_au;
    std::cerr << "\n";
}

int execute(const ExperimentConfig& cfg) {
    try {
        std::cerr << "writing artifacts to " << cfg.out_dir << "\n";
        const ExperimentResult res = run_experiment(
            cfg, cfg.out_dir,
            [&](const RoundRecord& r) { print_progress(r, cfg.federation.rounds); });
        if (res.best_round > 0) {
            const MetricsReport& best =
                res.records[static_cast<std::size_t>(res.best_round) - 1].metrics;
            std::cout << "best_round=" << res.best_round << " acc_all=" << best.acc_all
                      << " acc_seen=" << best.acc_seen;
            if (best.acc_au) std::cout << " acc_au=" << *best.acc_au;
            if (best.lu_gu_gap) std::cout << " lu_gu_gap=" << *best.lu_gu_gap;
            std::cout << "\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int do_run(const std::string& config_path, const std::string& preset, bool has_seed,
           std::uint64_t seed, const std::string& out) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
        apply_preset(cfg, preset);
        if (has_seed) cfg.seed = seed;
        if (!out.empty()) cfg.out_dir = out;
        if (cfg.out_dir.empty())
            cfg.out_dir = out_root() + "/run-" + preset + "-seed" + std::to_string(cfg.seed);
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    }
    return execute(cfg);
}

int do_sweep(const std::string& config_path, const std::string& preset, bool has_seed,
             std::uint64_t seed, const std::string& out, const std::string& param,
             const std::vector<std::string>& values) {
    ExperimentConfig base;
    try {
        base = load_config(config_path);
        apply_preset(base, preset);
        if (has_seed) base.seed = seed;
        if (values.empty()) throw ConfigError("sweep: --values is empty");
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    }

    const std::string root = !out.empty()            ? out
                             : !base.out_dir.empty() ? base.out_dir
                                                     : out_root() + "/sweep-" + sanitize(param);
    for (const std::string& value : values) {
        ExperimentConfig cfg;
        try {
            cfg = apply_override(base, param, value);
            cfg.out_dir = root + "/" + sanitize(param + "=" + value);
        } catch (const std::exception& e) {
            std::cerr << "configuration error: " << e.what() << "\n";
            return 1;
        }
        std::cerr << "== " << param << " = " << value << " ==\n";
        const int rc = execute(cfg);
        if (rc != 0) return rc;
    }
    return 0;
}

struct RunSeries {
    std::string name;
    std::string dir;
    std::string seed; // from the resolved config echo, if present
    std::vector<std::array<double, kMetricsFields>> rows;
    std::size_t best = 0;
};

RunSeries read_series(const std::string& dir) {
    RunSeries s;
    s.dir = dir;
    std::filesystem::path p(dir);
    if (p.filename().empty()) p = p.parent_path(); // tolerate trailing slash
    s.name = sanitize(p.filename().string());

    const std::string path = dir + "/metrics.csv";
    if (!file_exists(path)) throw ConfigError("compare: no metrics.csv in " + dir);
    const std::vector<std::string> lines = split(read_text(path), '\n');
    if (lines.empty() || lines[0] != kMetricsHeader)
        throw ConfigError("compare: " + path + " does not use the schema '" + kMetricsHeader +
                          "'");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::vector<std::string> fields = split(lines[i], ',');
        if (fields.size() != kMetricsFields)
            throw ConfigError("compare: " + path + " line " + std::to_string(i + 1) +
                              " has " + std::to_string(fields.size()) + " fields, expected 7");
        std::array<double, kMetricsFields> row{};
        for (int f = 0; f < kMetricsFields; ++f)
            row[static_cast<std::size_t>(f)] = std::strtod(fields[static_cast<std::size_t>(f)].c_str(), nullptr);
        s.rows.push_back(row);
    }
    if (s.rows.empty()) throw ConfigError("compare: " + path + " records no rounds");
    for (std::size_t i = 1; i < s.rows.size(); ++i)
        if (s.rows[i][1] > s.rows[s.best][1]) s.best = i;

    const std::string cfg_path = dir + "/config.json";
    if (file_exists(cfg_path)) {
        try {
            const auto j = nlohmann::ordered_json::parse(read_text(cfg_path));
            if (j.contains("seed")) s.seed = j.at("seed").dump();
        } catch (const std::exception&) {
            // a malformed echo only costs the seed column
        }
    }
    return s;
}

double median_ignoring_nan(std::vector<double> v) {
    std::erase_if(v, [](double x) { return std::isnan(x); });
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return median(v);
}

int do_compare(const std::vector<std::string>& dirs, const std::string& out) {
    try {
        if (dirs.size() < 2) throw ConfigError("compare: need at least two run directories");
        std::vector<RunSeries> series;
        series.reserve(dirs.size());
        for (const std::string& d : dirs) series.push_back(read_series(d));

        const std::array<const char*, 6> metric_names = {"acc_all", "acc_seen", "acc_lu",
                                                         "acc_gu",  "acc_au",   "lu_gu_gap"};

        // Best-round table: one row per run, then the across-run medians.
        std::string table = "name,seed,best_round,acc_all,acc_seen,acc_lu,acc_gu,acc_au,lu_gu_gap\n";
        for (const RunSeries& s : series) {
            const auto& row = s.rows[s.best];
            table += s.name + ',' + (s.seed.empty() ? "nan" : s.seed) + ',' +
                     format_double(row[0]);
            for (int m = 1; m < kMetricsFields; ++m)
                table += ',' + format_double(row[static_cast<std::size_t>(m)]);
            table += '\n';
        }
        table += "median,,";
        {
            std::vector<double> rounds;
            for (const RunSeries& s : series) rounds.push_back(s.rows[s.best][0]);
            table += format_double(median_ignoring_nan(rounds));
        }
        for (int m = 1; m < kMetricsFields; ++m) {
            std::vector<double> vals;
            for (const RunSeries& s : series)
                vals.push_back(s.rows[s.best][static_cast<std::size_t>(m)]);
            table += ',' + format_double(median_ignoring_nan(vals));
        }
        table += '\n';

        ensure_directory(out);
        write_text_atomic(out + "/best.csv", table);
        std::cout << table;

        // Plot data: per metric, one column per run aligned on round number.
        std::size_t max_rounds = 0;
        for (const RunSeries& s : series) max_rounds = std::max(max_rounds, s.rows.size());
        for (std::size_t m = 0; m < metric_names.size(); ++m) {
            std::string csv = "round";
            for (const RunSeries& s : series) csv += ',' + s.name;
            csv += '\n';
            for (std::size_t r = 0; r < max_rounds; ++r) {
                csv += std::to_string(r + 1);
                for (const RunSeries& s : series) {
                    csv += ',';
                    csv += r < s.rows.size() ? format_double(s.rows[r][m + 1]) : "nan";
                }
                csv += '\n';
            }
            write_text_atomic(out + "/plot_" + metric_names[m] + ".csv", csv);
        }
        std::cerr << "comparison written to " << out << "\n";
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated open-world semi-supervised learning simulator"};
    app.require_subcommand(1);

    std::string config_path, preset = "full", out, param;
    std::uint64_t seed = 0;
    std::vector<std::string> values, dirs;
    int rc = 0;

    CLI::App* run = app.add_subcommand("run", "Train one configuration");
    run->add_option("--config", config_path, "JSON config file")->required();
    run->add_option("--preset", preset, "Ablation preset: full, minus_R, minus_R_minus_ce, base");
    CLI::Option* run_seed = run->add_option("--seed", seed, "Override the config's seed");
    run->add_option("--out", out, "Output directory");
    run->callback([&] { rc = do_run(config_path, preset, run_seed->count() > 0, seed, out); });

    CLI::App* sweep = app.add_subcommand("sweep", "Run one configuration per parameter value");
    sweep->add_option("--config", config_path, "JSON config file")->required();
    sweep->add_option("--param", param, "Key to vary, e.g. objective.beta")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
    sweep->add_option("--preset", preset, "Ablation preset applied before the sweep");
    CLI::Option* sweep_seed = sweep->add_option("--seed", seed, "Override the config's seed");
    sweep->add_option("--out", out, "Root directory for the per-value runs");
    sweep->callback([&] {
        rc = do_sweep(config_path, preset, sweep_seed->count() > 0, seed, out, param, values);
    });

    CLI::App* compare = app.add_subcommand("compare", "Tabulate finished runs side by side");
    compare->add_option("dirs", dirs, "Run directories (each holding a metrics.csv)")
        ->required()
        ->expected(-1);
    compare->add_option("--out", out, "Directory for the comparison files")
        ->default_val("compare");
    compare->callback([&] { rc = do_compare(dirs, out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return rc;
}
