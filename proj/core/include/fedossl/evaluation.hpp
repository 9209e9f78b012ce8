#pragma once

#include <map>
#include <optional>
#include <vector>

#include "fedossl/dataset.hpp"
#include "fedossl/matrix.hpp"
#include "fedossl/model.hpp"

namespace fedossl {

struct ConfusionMatrix {
    Matrix counts; // true-class rows x predicted-label columns, integer-valued

    int classes() const { return counts.rows(); }
    double row_total(int c) const;
    double total() const;
};

ConfusionMatrix confusion(const Model& m, const TestSet& test);

// Maximize the total score of an injective row -> column assignment.
// result[row] = column, or -1 when rows outnumber columns and the row is
// left out of the maximum-cardinality matching.
std::vector<int> max_score_assignment(const Matrix& score);

// Which predicted labels unseen classes may claim: labels no seen class
// holds, plus labels where some unseen class outnumbers every seen class.
// match_all_labels lifts the restriction.
std::vector<int> candidate_labels(const ConfusionMatrix& cm, const ClassTaxonomy& taxonomy,
                                  bool match_all_labels = false);

struct UnseenMatch {
    std::map<int, int> label_to_class; // predicted label -> unseen class, injective
    double matched = 0.0;              // total correctly matched examples
    double accuracy = 0.0;             // matched / all unseen test examples
};

// Optimal assignment of unseen classes to candidate labels, maximizing the
// matched count. With more classes than candidates, a maximum-cardinality
// subset is matched and the rest score zero.
UnseenMatch hungarian_match(const ConfusionMatrix& cm, const std::vector<int>& unseen_classes,
                            const std::vector<int>& candidates);

// The conflict-resolution rule described alongside the evaluation protocol:
// repeatedly give the largest remaining count its label, so a class that
// loses its best label falls back to its next largest. Diagnostic only;
// never beats the optimal assignment.
UnseenMatch greedy_second_largest_match(const ConfusionMatrix& cm,
                                        const std::vector<int>& unseen_classes,
                                        const std::vector<int>& candidates);

struct MetricsReport {
    double acc_all = 0.0;
    double acc_seen = 0.0;
    std::optional<double> acc_lu;
    std::optional<double> acc_gu;
    std::optional<double> acc_au;
    std::optional<double> lu_gu_gap;   // acc_lu - acc_gu
    std::map<int, int> matching;       // predicted label -> unseen class
};

// Seen classes score by raw label (supervised outputs need no matching);
// all unseen classes are matched jointly, and the locally/globally unseen
// accuracies read off that one joint matching — so the overall unseen
// accuracy is not forced to be their weighted average.
MetricsReport metrics(const ConfusionMatrix& cm, const ClassTaxonomy& taxonomy,
                      bool match_all_labels = false);

struct GapReport {
    std::vector<std::optional<double>> per_round;
    std::optional<double> at_best_round; // best round by all-class accuracy
};

GapReport gap_report(const std::vector<MetricsReport>& records);

} // namespace fedossl
