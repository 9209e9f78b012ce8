#include "fedossl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "fedossl/error.hpp"

namespace fedossl {

double ConfusionMatrix::row_total(int c) const {
    double s = 0.0;
    for (int j = 0; j < counts.cols(); ++j) s += counts(c, j);
    return s;
}

double ConfusionMatrix::total() const {
    double s = 0.0;
    for (int c = 0; c < counts.rows(); ++c) s += row_total(c);
    return s;
}

ConfusionMatrix confusion(const Model& m, const TestSet& test) {
    if (test.X.rows() != static_cast<int>(test.y.size()))
        throw DataError("confusion: test features and labels disagree on length");
    if (test.X.rows() == 0) throw DataError("confusion: empty test set");
    const int C = m.num_classes();
    ConfusionMatrix cm{Matrix(C, C)};
    const Matrix logits = forward(m, test.X).logits;
    for (int i = 0; i < logits.rows(); ++i) {
        const int truth = test.y[static_cast<std::size_t>(i)];
        if (truth < 0 || truth >= C)
            throw DataError("confusion: test label " + std::to_string(truth) +
                            " outside the model's " + std::to_string(C) + " classes");
        cm.counts(truth, argmax_row(logits, i)) += 1.0;
    }
    return cm;
}

std::vector<int> max_score_assignment(const Matrix& score) {
    const int n = score.rows();
    if (n == 0) return {};
    // Pad with zero-score dummy columns when rows outnumber columns; rows
    // landing on a dummy are reported unassigned.
    const int m = std::max(score.cols(), n);
    if (score.cols() == 0) return std::vector<int>(static_cast<std::size_t>(n), -1);

    // Assignment by potentials on the minimization form (negated scores),
    // one augmenting row at a time. 1-indexed working arrays.
    const double inf = std::numeric_limits<double>::infinity();
    auto cost = [&](int i, int j) { // 1-indexed
        return j <= score.cols() ? -score(i - 1, j - 1) : 0.0;
    };
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> owner(static_cast<std::size_t>(m) + 1, 0); // column -> row
    std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        owner[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = owner[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(owner[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (owner[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            owner[static_cast<std::size_t>(j0)] = owner[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j) {
        const int i = owner[static_cast<std::size_t>(j)];
        if (i > 0 && j <= score.cols()) row_to_col[static_cast<std::size_t>(i) - 1] = j - 1;
    }
    return row_to_col;
}

std::vector<int> candidate_labels(const ConfusionMatrix& cm, const ClassTaxonomy& taxonomy,
                                  bool match_all_labels) {
    std::vector<int> out;
    if (match_all_labels) {
        for (int j = 0; j < cm.counts.cols(); ++j) out.push_back(j);
        return out;
    }
    const std::set<int> seen(taxonomy.seen.begin(), taxonomy.seen.end());
    const std::vector<int> unseen = taxonomy.all_unseen();
    for (int j = 0; j < cm.counts.cols(); ++j) {
        if (seen.count(j) == 0) {
            out.push_back(j);
            continue;
        }
        double best_seen = 0.0;
        for (int c : taxonomy.seen) best_seen = std::max(best_seen, cm.counts(c, j));
        double best_unseen = 0.0;
        for (int c : unseen) best_unseen = std::max(best_unseen, cm.counts(c, j));
        if (best_unseen > best_seen) out.push_back(j);
    }
    return out;
}

namespace {

double unseen_total(const ConfusionMatrix& cm, const std::vector<int>& unseen_classes) {
    double t = 0.0;
    for (int c : unseen_classes) t += cm.row_total(c);
    return t;
}

void check_match_inputs(const ConfusionMatrix& cm, const std::vector<int>& unseen_classes,
                        const std::vector<int>& candidates) {
    for (int c : unseen_classes)
        if (c < 0 || c >= cm.counts.rows())
            throw ConfigError("unseen class " + std::to_string(c) +
                              " outside the confusion matrix");
    for (int j : candidates)
        if (j < 0 || j >= cm.counts.cols())
            throw ConfigError("candidate label " + std::to_string(j) +
                              " outside the confusion matrix");
}

} // namespace

UnseenMatch hungarian_match(const ConfusionMatrix& cm, const std::vector<int>& unseen_classes,
                            const std::vector<int>& candidates) {
    check_match_inputs(cm, unseen_classes, candidates);
    UnseenMatch res;
    const double denom = unseen_total(cm, unseen_classes);
    if (unseen_classes.empty() || candidates.empty()) return res;

    Matrix score(static_cast<int>(unseen_classes.size()), static_cast<int>(candidates.size()));
    for (std::size_t i = 0; i < unseen_classes.size(); ++i)
        for (std::size_t j = 0; j < candidates.size(); ++j)
            score(static_cast<int>(i), static_cast<int>(j)) =
                cm.counts(unseen_classes[i], candidates[j]);

    const std::vector<int> assign = max_score_assignment(score);
    for (std::size_t i = 0; i < unseen_classes.size(); ++i) {
        const int j = assign[i];
        if (j < 0) continue;
        res.label_to_class[candidates[static_cast<std::size_t>(j)]] = unseen_classes[i];
        res.matched += score(static_cast<int>(i), j);
    }
    res.accuracy = denom > 0.0 ? res.matched / denom : 0.0;
    return res;
}

UnseenMatch greedy_second_largest_match(const ConfusionMatrix& cm,
                                        const std::vector<int>& unseen_classes,
                                        const std::vector<int>& candidates) {
    check_match_inputs(cm, unseen_classes, candidates);
    UnseenMatch res;
    const double denom = unseen_total(cm, unseen_classes);
    std::set<int> free_classes(unseen_classes.begin(), unseen_classes.end());
    std::set<int> free_labels(candidates.begin(), candidates.end());
    while (!free_classes.empty() && !free_labels.empty()) {
        double best = -1.0;
        int bc = -1, bl = -1;
        for (int c : free_classes) {
            for (int j : free_labels) {
                if (cm.counts(c, j) > best) {
                    best = cm.counts(c, j);
                    bc = c;
                    bl = j;
                }
            }
        }
        res.label_to_class[bl] = bc;
        res.matched += best;
        free_classes.erase(bc);
        free_labels.erase(bl);
    }
    res.accuracy = denom > 0.0 ? res.matched / denom : 0.0;
    return res;
}

MetricsReport metrics(const ConfusionMatrix& cm, const ClassTaxonomy& taxonomy,
                      bool match_all_labels) {
    const double total = cm.total();
    if (total <= 0.0) throw DataError("metrics: empty confusion matrix");

    const std::set<int> seen(taxonomy.seen.begin(), taxonomy.seen.end());
    const std::vector<int> lu = taxonomy.all_locally_unseen();
    const std::vector<int> gu = taxonomy.all_globally_unseen();
    std::set<int> known(seen);
    known.insert(lu.begin(), lu.end());
    known.insert(gu.begin(), gu.end());
    for (int c = 0; c < cm.counts.rows(); ++c)
        if (cm.row_total(c) > 0.0 && known.count(c) == 0)
            throw ConfigError("metrics: test class " + std::to_string(c) +
                              " missing from the class taxonomy");

    // Only unseen classes that actually appear in the test set enter the
    // matching; absent classes would just occupy labels to no effect.
    std::vector<int> unseen_present;
    for (int c : taxonomy.all_unseen())
        if (cm.row_total(c) > 0.0) unseen_present.push_back(c);

    MetricsReport rep;
    double seen_correct = 0.0, seen_total = 0.0;
    for (int c : taxonomy.seen) {
        seen_correct += cm.counts(c, c);
        seen_total += cm.row_total(c);
    }
    rep.acc_seen = seen_total > 0.0 ? seen_correct / seen_total : 0.0;

    const UnseenMatch match = hungarian_match(
        cm, unseen_present, candidate_labels(cm, taxonomy, match_all_labels));
    rep.matching = match.label_to_class;

    std::map<int, int> class_to_label;
    for (const auto& [label, cls] : match.label_to_class) class_to_label[cls] = label;

    auto partition_accuracy = [&](const std::vector<int>& classes) -> std::optional<double> {
        double part_total = 0.0, part_correct = 0.0;
        for (int c : classes) {
            part_total += cm.row_total(c);
            auto it = class_to_label.find(c);
            if (it != class_to_label.end()) part_correct += cm.counts(c, it->second);
        }
        if (part_total <= 0.0) return std::nullopt;
        return part_correct / part_total;
    };

    rep.acc_lu = partition_accuracy(lu);
    rep.acc_gu = partition_accuracy(gu);
    rep.acc_au = partition_accuracy(taxonomy.all_unseen());
    if (rep.acc_lu && rep.acc_gu) rep.lu_gu_gap = *rep.acc_lu - *rep.acc_gu;
    rep.acc_all = (seen_correct + match.matched) / total;
    return rep;
}

GapReport gap_report(const std::vector<MetricsReport>& records) {
    GapReport out;
    out.per_round.reserve(records.size());
    for (const auto& r : records) out.per_round.push_back(r.lu_gu_gap);
    if (records.empty()) return out;
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].acc_all > records[best].acc_all) best = i;
    out.at_best_round = records[best].lu_gu_gap;
    return out;
}

} // namespace fedossl
