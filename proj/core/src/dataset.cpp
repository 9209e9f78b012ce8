#include "fedossl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fedossl/error.hpp"
#include "fedossl/io.hpp"

namespace fedossl {

namespace {

// Seed-stream tags so sub-purposes never collide.
enum : uint64_t {
    kTagMeans = 0x11,
    kTagPoints = 0x12,
    kTagClassOrder = 0x21,
    kTagClassSplit = 0x22,
    kTagShardShuffle = 0x23,
    kTagDirichlet = 0x24,
};

// Held-out slice per class. Not configurable: the simulator's benchmark
// contract needs every class represented in the test set, nothing more.
constexpr double kTestFraction = 1.0 / 6.0;

} // namespace

Dataset generate_synthetic(int classes, int dims, int per_class, double separation,
                           uint64_t seed) {
    if (classes < 4) throw ConfigError("generate_synthetic: need at least 4 classes");
    if (dims < 2) throw ConfigError("generate_synthetic: need at least 2 dims");
    if (per_class < 1) throw ConfigError("generate_synthetic: per_class must be positive");
    if (separation <= 0.0) throw ConfigError("generate_synthetic: separation must be positive");

    // Means drawn from N(0, sigma^2 I) and rejected until the new mean keeps
    // pairwise distance >= separation. sigma tracks separation so acceptance
    // stays high in moderate dimension; when the space genuinely cannot hold
    // the requested configuration the attempt budget runs out.
    Matrix means(classes, dims);
    Rng mean_rng(derive_seed(seed, kTagMeans));
    const double sigma = separation * std::max(1.0, 3.0 / std::sqrt(2.0 * dims));
    const int max_attempts = 1000 * classes;
    int attempts = 0;
    for (int c = 0; c < classes; ++c) {
        while (true) {
            if (++attempts > max_attempts) {
                std::ostringstream msg;
                msg << "generate_synthetic: cannot place " << classes
                    << " class means at separation " << separation << " in " << dims
                    << " dims (gave up after " << max_attempts << " attempts)";
                throw ConfigError(msg.str());
            }
            for (int j = 0; j < dims; ++j) means(c, j) = sigma * mean_rng.normal();
            bool ok = true;
            for (int prev = 0; prev < c && ok; ++prev)
                if (sq_distance(means, c, means, prev) < separation * separation) ok = false;
            if (ok) break;
        }
    }

    Dataset ds;
    ds.classes = classes;
    ds.X = Matrix(classes * per_class, dims);
    ds.y.resize(static_cast<size_t>(classes) * per_class);
    Rng point_rng(derive_seed(seed, kTagPoints));
    int row = 0;
    for (int c = 0; c < classes; ++c) {
        for (int k = 0; k < per_class; ++k, ++row) {
            for (int j = 0; j < dims; ++j) ds.X(row, j) = means(c, j) + point_rng.normal();
            ds.y[static_cast<size_t>(row)] = c;
        }
    }
    return ds;
}

Dataset ingest_csv(const std::string& path) {
    const std::string text = read_text(path);
    Dataset ds;
    int width = -1;
    int line_no = 0;
    size_t pos = 0;
    std::vector<double> features;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() < 2)
            throw DataError("line " + std::to_string(line_no) + ": expected features and a class id");
        if (width == -1) width = static_cast<int>(cells.size()) - 1;
        if (static_cast<int>(cells.size()) - 1 != width)
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(width + 1) + " fields, got " +
                            std::to_string(cells.size()));
        for (int j = 0; j < width; ++j) {
            char* end = nullptr;
            const double v = std::strtod(cells[static_cast<size_t>(j)].c_str(), &end);
            if (end == cells[static_cast<size_t>(j)].c_str() || *end != '\0' || !std::isfinite(v))
                throw DataError("line " + std::to_string(line_no) + ": non-numeric feature '" +
                                cells[static_cast<size_t>(j)] + "'");
            features.push_back(v);
        }
        const std::string& label_cell = cells.back();
        char* end = nullptr;
        const long label = std::strtol(label_cell.c_str(), &end, 10);
        if (end == label_cell.c_str() || *end != '\0' || label < 0)
            throw DataError("line " + std::to_string(line_no) + ": bad class id '" + label_cell + "'");
        ds.y.push_back(static_cast<int>(label));
    }
    if (ds.y.empty()) throw DataError("line 0: empty dataset file " + path);

    ds.X = Matrix(static_cast<int>(ds.y.size()), width);
    std::copy(features.begin(), features.end(), ds.X.data());
    ds.classes = *std::max_element(ds.y.begin(), ds.y.end()) + 1;
    return ds;
}

void export_csv(const std::string& path, const Dataset& ds) {
    std::ostringstream out;
    for (int i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.dims(); ++j) out << format_double(ds.X(i, j)) << ',';
        out << ds.y[static_cast<size_t>(i)] << '\n';
    }
    write_text_atomic(path, out.str());
}

ClientShard::ClientShard(int id, LabeledSet lab, Matrix unlab, std::vector<int> truth)
    : client_id(id),
      labeled(std::move(lab)),
      unlabeled(std::move(unlab)),
      unlabeled_truth_(std::move(truth)) {
    if (labeled.X.rows() != static_cast<int>(labeled.y.size()))
        throw DataError("ClientShard: labeled features/labels length mismatch");
    if (unlabeled.rows() != static_cast<int>(unlabeled_truth_.size()))
        throw DataError("ClientShard: unlabeled features/truth length mismatch");
}

void ClientShard::set_unlabeled_truth(EvalKey, std::vector<int> truth) {
    if (static_cast<int>(truth.size()) != unlabeled.rows())
        throw DataError("set_unlabeled_truth: length mismatch");
    unlabeled_truth_ = std::move(truth);
}

std::vector<int> ClassTaxonomy::all_locally_unseen() const {
    std::set<int> u;
    for (const auto& s : locally_unseen) u.insert(s.begin(), s.end());
    return {u.begin(), u.end()};
}

std::vector<int> ClassTaxonomy::all_globally_unseen() const {
    std::set<int> u;
    for (const auto& s : globally_unseen) u.insert(s.begin(), s.end());
    return {u.begin(), u.end()};
}

std::vector<int> ClassTaxonomy::all_unseen() const {
    std::set<int> u;
    for (const auto& s : locally_unseen) u.insert(s.begin(), s.end());
    for (const auto& s : globally_unseen) u.insert(s.begin(), s.end());
    return {u.begin(), u.end()};
}

namespace {

// Split `count` items into `parts` chunk sizes that differ by at most one,
// extras going to the lowest part indices.
std::vector<int> even_chunks(int count, int parts) {
    std::vector<int> sizes(static_cast<size_t>(parts), count / parts);
    for (int i = 0; i < count % parts; ++i) sizes[static_cast<size_t>(i)]++;
    return sizes;
}

// Symmetric-Dirichlet chunk sizes via normalized Gamma draws
// (Marsaglia-Tsang with the alpha<1 boost), all examples assigned.
std::vector<int> dirichlet_chunks(int count, int parts, double alpha, Rng& rng) {
    auto gamma_draw = [&rng](double a) {
        double boost = 1.0;
        if (a < 1.0) {
            boost = std::pow(rng.uniform01() + 1e-300, 1.0 / a);
            a += 1.0;
        }
        const double d = a - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double x = rng.normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = rng.uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
                return boost * d * v;
        }
    };
    std::vector<double> w(static_cast<size_t>(parts));
    double total = 0.0;
    for (double& v : w) {
        v = gamma_draw(alpha);
        total += v;
    }
    std::vector<int> sizes(static_cast<size_t>(parts));
    int assigned = 0;
    std::vector<std::pair<double, int>> remainders;
    for (int i = 0; i < parts; ++i) {
        const double share = w[static_cast<size_t>(i)] / total * count;
        sizes[static_cast<size_t>(i)] = static_cast<int>(share);
        assigned += sizes[static_cast<size_t>(i)];
        remainders.push_back({share - sizes[static_cast<size_t>(i)], i});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int k = 0; k < count - assigned; ++k)
        sizes[static_cast<size_t>(remainders[static_cast<size_t>(k)].second)]++;
    return sizes;
}

struct ExamplePool {
    std::vector<int> rows; // dataset row indices, pre-shuffled
    size_t cursor = 0;
    std::vector<int> take(int k) {
        std::vector<int> out(rows.begin() + static_cast<long>(cursor),
                             rows.begin() + static_cast<long>(cursor) + k);
        cursor += static_cast<size_t>(k);
        return out;
    }
};

} // namespace

PartitionResult partition_open_world(const Dataset& ds, const PartitionParams& p,
                                     uint64_t seed) {
    const int C = ds.classes;
    const int K = p.clients;
    if (K < 1) throw ConfigError("partition_open_world: need at least 1 client");
    if (p.seen_fraction <= 0.0 || p.seen_fraction >= 1.0)
        throw ConfigError("partition_open_world: seen_fraction must lie in (0,1)");
    if (p.labeled_fraction < 0.0 || p.labeled_fraction > 1.0)
        throw ConfigError("partition_open_world: labeled_fraction must lie in [0,1]");
    if (p.gu_per_client < 0 || p.lu_per_client < 0)
        throw ConfigError("partition_open_world: negative class counts");

    const int n_seen = static_cast<int>(std::llround(C * p.seen_fraction));
    const int n_unseen = C - n_seen;
    const int n_gu = K * p.gu_per_client;
    const int n_lu = n_unseen - n_gu;
    {
        std::ostringstream why;
        if (n_seen < 1 || n_seen >= C)
            why << "seen_fraction " << p.seen_fraction << " of " << C << " classes gives "
                << n_seen << " seen classes; ";
        if (n_lu < 0)
            why << n_unseen << " unseen classes cannot supply " << K << " clients x "
                << p.gu_per_client << " = " << n_gu << " exclusive classes; ";
        if (n_lu > 0 && p.lu_per_client < 1)
            why << n_lu << " shared unseen classes left over but lu_per_client is 0; ";
        if (n_lu == 0 && p.lu_per_client > 0)
            why << "lu_per_client " << p.lu_per_client << " requested but no unseen classes remain after "
                << n_gu << " exclusive assignments; ";
        if (n_lu > 0 && p.lu_per_client > n_lu)
            why << "lu_per_client " << p.lu_per_client << " exceeds the " << n_lu
                << " shared unseen classes available; ";
        if (n_lu > 0 && p.lu_per_client >= 1 && K * p.lu_per_client < 2 * n_lu)
            why << K << " clients x " << p.lu_per_client << " shared slots cannot place each of "
                << n_lu << " shared classes on >= 2 clients; ";
        const std::string msg = why.str();
        if (!msg.empty())
            throw ConfigError("partition_open_world: infeasible class arithmetic: " + msg +
                              "(classes=" + std::to_string(C) + ", clients=" + std::to_string(K) + ")");
    }

    std::vector<int> class_order(static_cast<size_t>(C));
    std::iota(class_order.begin(), class_order.end(), 0);
    Rng class_rng(derive_seed(seed, kTagClassOrder));
    class_rng.shuffle(class_order);

    ClassTaxonomy tax;
    tax.seen.assign(class_order.begin(), class_order.begin() + n_seen);
    std::sort(tax.seen.begin(), tax.seen.end());
    tax.locally_unseen.assign(static_cast<size_t>(K), {});
    tax.globally_unseen.assign(static_cast<size_t>(K), {});

    std::vector<int> gu_owner(static_cast<size_t>(C), -1);
    for (int i = 0; i < K; ++i) {
        for (int s = 0; s < p.gu_per_client; ++s) {
            const int cls = class_order[static_cast<size_t>(n_seen + i * p.gu_per_client + s)];
            tax.globally_unseen[static_cast<size_t>(i)].push_back(cls);
            gu_owner[static_cast<size_t>(cls)] = i;
        }
        std::sort(tax.globally_unseen[static_cast<size_t>(i)].begin(),
                  tax.globally_unseen[static_cast<size_t>(i)].end());
    }

    std::vector<std::vector<int>> lu_holders(static_cast<size_t>(C));
    if (n_lu > 0) {
        const int* lu_pool = class_order.data() + n_seen + n_gu;
        for (int i = 0; i < K; ++i) {
            for (int s = 0; s < p.lu_per_client; ++s) {
                const int cls = lu_pool[(i * p.lu_per_client + s) % n_lu];
                tax.locally_unseen[static_cast<size_t>(i)].push_back(cls);
                lu_holders[static_cast<size_t>(cls)].push_back(i);
            }
            std::sort(tax.locally_unseen[static_cast<size_t>(i)].begin(),
                      tax.locally_unseen[static_cast<size_t>(i)].end());
        }
        for (int idx = 0; idx < n_lu; ++idx) {
            const int cls = lu_pool[idx];
            if (lu_holders[static_cast<size_t>(cls)].size() < 2)
                throw ConfigError("partition_open_world: shared unseen class " +
                                  std::to_string(cls) + " landed on fewer than 2 clients (" +
                                  std::to_string(K) + " clients, lu_per_client=" +
                                  std::to_string(p.lu_per_client) + ", shared classes=" +
                                  std::to_string(n_lu) + ")");
        }
    }

    // Per-class row pools, shuffled; test slice carved off the front.
    std::vector<std::vector<int>> rows_of_class(static_cast<size_t>(C));
    for (int r = 0; r < ds.size(); ++r) {
        const int c = ds.y[static_cast<size_t>(r)];
        if (c < 0 || c >= C) throw DataError("partition_open_world: class id out of range");
        rows_of_class[static_cast<size_t>(c)].push_back(r);
    }
    Rng split_rng(derive_seed(seed, kTagClassSplit));
    Rng dir_rng(derive_seed(seed, kTagDirichlet));

    std::vector<int> test_rows;
    std::vector<std::vector<int>> client_labeled_rows(static_cast<size_t>(K));
    std::vector<std::vector<int>> client_unlabeled_rows(static_cast<size_t>(K));

    const std::vector<int> seen_sorted = tax.seen;
    for (int c = 0; c < C; ++c) {
        std::vector<int>& pool = rows_of_class[static_cast<size_t>(c)];
        if (pool.empty())
            throw DataError("partition_open_world: class " + std::to_string(c) + " has no examples");
        split_rng.shuffle(pool);
        const int n_test = std::max(1, static_cast<int>(std::llround(pool.size() * kTestFraction)));
        if (n_test >= static_cast<int>(pool.size()))
            throw DataError("partition_open_world: class " + std::to_string(c) +
                            " too small to carve a held-out slice");
        test_rows.insert(test_rows.end(), pool.begin(), pool.begin() + n_test);
        ExamplePool train{std::vector<int>(pool.begin() + n_test, pool.end()), 0};
        const int n_train = static_cast<int>(train.rows.size());

        const bool is_seen = std::binary_search(seen_sorted.begin(), seen_sorted.end(), c);
        if (is_seen) {
            const std::vector<int> sizes =
                p.dirichlet_alpha > 0.0 ? dirichlet_chunks(n_train, K, p.dirichlet_alpha, dir_rng)
                                        : even_chunks(n_train, K);
            for (int i = 0; i < K; ++i) {
                const std::vector<int> chunk = train.take(sizes[static_cast<size_t>(i)]);
                const int n_lab =
                    static_cast<int>(std::llround(p.labeled_fraction * chunk.size()));
                for (int k = 0; k < static_cast<int>(chunk.size()); ++k) {
                    if (k < n_lab)
                        client_labeled_rows[static_cast<size_t>(i)].push_back(chunk[static_cast<size_t>(k)]);
                    else
                        client_unlabeled_rows[static_cast<size_t>(i)].push_back(chunk[static_cast<size_t>(k)]);
                }
            }
        } else if (gu_owner[static_cast<size_t>(c)] >= 0) {
            const int owner = gu_owner[static_cast<size_t>(c)];
            const std::vector<int> chunk = train.take(n_train);
            client_unlabeled_rows[static_cast<size_t>(owner)].insert(
                client_unlabeled_rows[static_cast<size_t>(owner)].end(), chunk.begin(), chunk.end());
        } else {
            const std::vector<int>& holders = lu_holders[static_cast<size_t>(c)];
            const std::vector<int> sizes = even_chunks(n_train, static_cast<int>(holders.size()));
            for (size_t h = 0; h < holders.size(); ++h) {
                const std::vector<int> chunk = train.take(sizes[h]);
                auto& dst = client_unlabeled_rows[static_cast<size_t>(holders[h])];
                dst.insert(dst.end(), chunk.begin(), chunk.end());
            }
        }
    }

    PartitionResult out;
    out.taxonomy = std::move(tax);
    out.shards.reserve(static_cast<size_t>(K));
    for (int i = 0; i < K; ++i) {
        Rng shard_rng(derive_seed(seed, kTagShardShuffle, static_cast<uint64_t>(i)));
        std::vector<int>& lab_rows = client_labeled_rows[static_cast<size_t>(i)];
        std::vector<int>& unl_rows = client_unlabeled_rows[static_cast<size_t>(i)];
        shard_rng.shuffle(lab_rows);
        shard_rng.shuffle(unl_rows);

        LabeledSet lab;
        lab.X = gather_rows(ds.X, lab_rows);
        lab.y.reserve(lab_rows.size());
        for (int r : lab_rows) lab.y.push_back(ds.y[static_cast<size_t>(r)]);

        std::vector<int> truth;
        truth.reserve(unl_rows.size());
        for (int r : unl_rows) truth.push_back(ds.y[static_cast<size_t>(r)]);

        out.shards.emplace_back(i, std::move(lab), gather_rows(ds.X, unl_rows), std::move(truth));
    }

    std::sort(test_rows.begin(), test_rows.end());
    out.test.X = gather_rows(ds.X, test_rows);
    out.test.y.reserve(test_rows.size());
    for (int r : test_rows) out.test.y.push_back(ds.y[static_cast<size_t>(r)]);
    return out;
}

// The sole production reader of hidden labels; runs on the evaluation side
// of the interface boundary (friend of EvalKey).
ClassTaxonomy derive_taxonomy(const std::vector<ClientShard>& shards) {
    if (shards.empty()) throw DataError("derive_taxonomy: no shards");
    const int K = static_cast<int>(shards.size());

    std::set<int> seen;
    for (const ClientShard& s : shards) seen.insert(s.labeled.y.begin(), s.labeled.y.end());

    // Multiplicity of each unseen class across clients' unlabeled pools.
    std::vector<std::set<int>> unl_classes(static_cast<size_t>(K));
    std::set<int> unseen_all;
    for (int i = 0; i < K; ++i) {
        for (int c : shards[static_cast<size_t>(i)].unlabeled_truth(EvalKey{})) {
            if (seen.count(c)) continue;
            unl_classes[static_cast<size_t>(i)].insert(c);
            unseen_all.insert(c);
        }
    }
    ClassTaxonomy tax;
    tax.seen.assign(seen.begin(), seen.end());
    tax.locally_unseen.assign(static_cast<size_t>(K), {});
    tax.globally_unseen.assign(static_cast<size_t>(K), {});
    for (int c : unseen_all) {
        int count = 0;
        for (int i = 0; i < K; ++i)
            if (unl_classes[static_cast<size_t>(i)].count(c)) ++count;
        for (int i = 0; i < K; ++i) {
            if (!unl_classes[static_cast<size_t>(i)].count(c)) continue;
            if (count >= 2)
                tax.locally_unseen[static_cast<size_t>(i)].push_back(c);
            else
                tax.globally_unseen[static_cast<size_t>(i)].push_back(c);
        }
    }
    return tax;
}

void write_taxonomy(const std::string& path, const ClassTaxonomy& tax) {
    std::ostringstream out;
    out << "seen:";
    for (int c : tax.seen) out << ' ' << c;
    out << '\n';
    for (int i = 0; i < tax.num_clients(); ++i) {
        out << "client " << i << " locally_unseen:";
        for (int c : tax.locally_unseen[static_cast<size_t>(i)]) out << ' ' << c;
        out << " globally_unseen:";
        for (int c : tax.globally_unseen[static_cast<size_t>(i)]) out << ' ' << c;
        out << '\n';
    }
    write_text_atomic(path, out.str());
}

} // namespace fedossl
