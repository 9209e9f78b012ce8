#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedossl/dataset.hpp"
#include "fedossl/error.hpp"
#include "fedossl/evaluation.hpp"
#include "fedossl/matrix.hpp"
#include "fedossl/model.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace {

ConfusionMatrix cm_from(int classes, std::initializer_list<double> vals) {
    ConfusionMatrix cm;
    cm.counts = Matrix(classes, classes);
    int i = 0;
    for (double v : vals) cm.counts.data()[i++] = v;
    REQUIRE(i == classes * classes);
    return cm;
}

ClassTaxonomy split_taxonomy(const std::vector<int>& seen, const std::vector<int>& lu,
                             const std::vector<int>& gu) {
    ClassTaxonomy t;
    t.seen = seen;
    // park classes on a two-client layout: shared -> both, exclusive -> client 0
    t.locally_unseen.resize(2);
    t.globally_unseen.resize(2);
    for (int c : lu) {
        t.locally_unseen[0].push_back(c);
        t.locally_unseen[1].push_back(c);
    }
    for (int c : gu) t.globally_unseen[0].push_back(c);
    return t;
}

// exhaustive injective assignment search, the small-case oracle
double brute_best(const ConfusionMatrix& cm, const std::vector<int>& classes,
                  const std::vector<int>& candidates) {
    const size_t k = classes.size();
    std::vector<int> pick(candidates.begin(), candidates.end());
    double best = 0.0;
    // choose an ordered subset of candidates of size min(k, |candidates|)
    std::vector<int> idx(pick.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end());
    // permute all candidates; when they outnumber the classes only the first
    // k positions matter, duplicates just revisit the same score
    do {
        double s = 0.0;
        for (size_t i = 0; i < k && i < idx.size(); ++i)
            s += cm.counts(classes[i], pick[static_cast<size_t>(idx[i])]);
        best = std::max(best, s);
    } while (std::next_permutation(idx.begin(), idx.end()));
    return best;
}

} // namespace

TEST_CASE("confusion tabulates argmax predictions against true labels") {
    // bias-only model: zeroed extractor makes logits equal the head bias
    Rng r(1);
    Model m = init_model({2, 3}, 3, r);
    for (Layer& l : m.extractor) {
        for (size_t i = 0; i < l.W.size(); ++i) l.W.data()[i] = 0.0;
        for (size_t i = 0; i < l.b.size(); ++i) l.b.data()[i] = 0.0;
    }
    for (size_t i = 0; i < m.head.W.size(); ++i) m.head.W.data()[i] = 0.0;
    m.head.b(0, 1) = 3.0; // every row predicts label 1

    TestSet test;
    test.X = Matrix(4, 2);
    test.y = {0, 1, 1, 2};
    const ConfusionMatrix cm = confusion(m, test);
    CHECK(cm.classes() == 3);
    CHECK(cm.counts(0, 1) == 1.0);
    CHECK(cm.counts(1, 1) == 2.0);
    CHECK(cm.counts(2, 1) == 1.0);
    CHECK(cm.total() == 4.0);
    CHECK(cm.row_total(1) == 2.0);
    CHECK(cm.row_total(0) == 1.0);
}

TEST_CASE("confusion rejects an empty test set") {
    Rng r(2);
    const Model m = init_model({2, 3}, 3, r);
    TestSet empty;
    CHECK_THROWS_AS(confusion(m, empty), DataError);
}

TEST_CASE("assignment solver finds the exchange optimum") {
    // greedy would take (0,0)=9 then settle for (1,1)=1: total 10;
    // the optimum swaps to 8 + 7 = 15
    Matrix score(2, 2);
    score(0, 0) = 9.0;
    score(0, 1) = 8.0;
    score(1, 0) = 7.0;
    score(1, 1) = 1.0;
    const std::vector<int> a = max_score_assignment(score);
    CHECK(a == std::vector<int>{1, 0});
}

TEST_CASE("assignment solver matches brute force on random instances") {
    Rng r(7);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 1 + static_cast<int>(r.uniform_int(5));
        Matrix score(n, n);
        for (size_t i = 0; i < score.size(); ++i)
            score.data()[i] = std::floor(20.0 * r.uniform01());
        const std::vector<int> a = max_score_assignment(score);
        double got = 0.0;
        std::vector<bool> used(static_cast<size_t>(n), false);
        for (int i = 0; i < n; ++i) {
            REQUIRE(a[static_cast<size_t>(i)] >= 0);
            CHECK(!used[static_cast<size_t>(a[static_cast<size_t>(i)])]);
            used[static_cast<size_t>(a[static_cast<size_t>(i)])] = true;
            got += score(i, a[static_cast<size_t>(i)]);
        }
        std::vector<int> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        double best = 0.0;
        do {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += score(i, perm[static_cast<size_t>(i)]);
            best = std::max(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(got == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("surplus rows are left unmatched, not doubled up") {
    Matrix score(3, 2);
    score(0, 0) = 5.0;
    score(0, 1) = 0.0;
    score(1, 0) = 0.0;
    score(1, 1) = 4.0;
    score(2, 0) = 1.0;
    score(2, 1) = 1.0;
    const std::vector<int> a = max_score_assignment(score);
    REQUIRE(a.size() == 3);
    CHECK(a[0] == 0);
    CHECK(a[1] == 1);
    CHECK(a[2] == -1);
}

TEST_CASE("candidate labels exclude labels a seen class is winning") {
    // classes 0,1 seen; 2,3 unseen. label 1 belongs to seen class 1;
    // label 2 is contested but the unseen class outnumbers the seen one
    const ConfusionMatrix cm = cm_from(4, {
        10, 0, 0, 0,  // seen 0 -> label 0
        0, 8, 2, 0,   // seen 1 -> mostly label 1, a little label 2
        0, 0, 9, 1,   // unseen 2 -> label 2 (outnumbers seen's 2)
        0, 0, 0, 10,  // unseen 3 -> label 3
    });
    const ClassTaxonomy tax = split_taxonomy({0, 1}, {2}, {3});
    const std::vector<int> cand = candidate_labels(cm, tax);
    CHECK(cand == std::vector<int>{2, 3});
    const std::vector<int> all = candidate_labels(cm, tax, true);
    CHECK(all == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("a label nobody predicts is still available to unseen classes") {
    const ConfusionMatrix cm = cm_from(3, {
        10, 0, 0,
        0, 10, 0,
        5, 5, 0, // unseen class split between seen labels; label 2 unused
    });
    const ClassTaxonomy tax = split_taxonomy({0, 1}, {}, {2});
    const std::vector<int> cand = candidate_labels(cm, tax);
    CHECK(cand == std::vector<int>{2});
}

TEST_CASE("optimal matching beats the headline greedy on the crafted example") {
    // unseen classes 0,1 over candidate labels 0,1: the 5/4 vs 4/5 block
    const ConfusionMatrix cm = cm_from(3, {
        5, 4, 0,
        4, 5, 0,
        0, 0, 5,
    });
    const std::vector<int> unseen{0, 1, 2};
    const std::vector<int> cand{0, 1, 2};
    const UnseenMatch opt = hungarian_match(cm, unseen, cand);
    CHECK(opt.matched == doctest::Approx(15.0));
    CHECK(opt.accuracy == doctest::Approx(15.0 / 23.0));
    CHECK(opt.label_to_class.at(0) == 0);
    CHECK(opt.label_to_class.at(1) == 1);
    CHECK(opt.label_to_class.at(2) == 2);
}

TEST_CASE("hungarian match equals brute force on random confusions") {
    Rng r(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(r.uniform_int(5)); // unseen classes, <= 7
        const int labels = k + static_cast<int>(r.uniform_int(3));
        ConfusionMatrix cm;
        cm.counts = Matrix(k, labels);
        for (size_t i = 0; i < cm.counts.size(); ++i)
            cm.counts.data()[i] = std::floor(12.0 * r.uniform01());
        std::vector<int> unseen(static_cast<size_t>(k));
        std::iota(unseen.begin(), unseen.end(), 0);
        std::vector<int> cand(static_cast<size_t>(labels));
        std::iota(cand.begin(), cand.end(), 0);
        const UnseenMatch got = hungarian_match(cm, unseen, cand);
        CHECK(got.matched == doctest::Approx(brute_best(cm, unseen, cand)).epsilon(1e-12));
    }
}

TEST_CASE("matching is injective even when classes outnumber candidates") {
    const ConfusionMatrix cm = cm_from(3, {
        7, 0, 0,
        6, 0, 0,
        5, 0, 0, // everyone wants label 0
    });
    const UnseenMatch m = hungarian_match(cm, {0, 1, 2}, {0});
    CHECK(m.label_to_class.size() == 1);
    CHECK(m.label_to_class.at(0) == 0); // the largest count wins
    CHECK(m.matched == doctest::Approx(7.0));
}

TEST_CASE("greedy fallback resolves conflicts by the next largest count") {
    // class A's best label is also class B's best; B is larger, so A falls
    // back to its second choice
    ConfusionMatrix cm;
    cm.counts = Matrix(2, 3);
    cm.counts(0, 0) = 6.0;
    cm.counts(0, 1) = 4.0;
    cm.counts(1, 0) = 9.0;
    cm.counts(1, 2) = 1.0;
    const UnseenMatch g = greedy_second_largest_match(cm, {0, 1}, {0, 1, 2});
    CHECK(g.label_to_class.at(0) == 1);
    CHECK(g.label_to_class.at(1) == 0);
    CHECK(g.matched == doctest::Approx(13.0));
    const UnseenMatch opt = hungarian_match(cm, {0, 1}, {0, 1, 2});
    CHECK(opt.matched == doctest::Approx(13.0)); // same here, but never less
}

TEST_CASE("greedy never beats the optimal matching") {
    Rng r(13);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(r.uniform_int(4));
        ConfusionMatrix cm;
        cm.counts = Matrix(k, k + 1);
        for (size_t i = 0; i < cm.counts.size(); ++i)
            cm.counts.data()[i] = std::floor(10.0 * r.uniform01());
        std::vector<int> unseen(static_cast<size_t>(k));
        std::iota(unseen.begin(), unseen.end(), 0);
        std::vector<int> cand(static_cast<size_t>(k + 1));
        std::iota(cand.begin(), cand.end(), 0);
        const UnseenMatch g = greedy_second_largest_match(cm, unseen, cand);
        const UnseenMatch opt = hungarian_match(cm, unseen, cand);
        CHECK(g.matched <= opt.matched + 1e-12);
    }
}

TEST_CASE("metrics on a diagonal confusion are perfect everywhere") {
    ConfusionMatrix cm;
    cm.counts = Matrix(4, 4);
    for (int c = 0; c < 4; ++c) cm.counts(c, c) = 10.0;
    const ClassTaxonomy tax = split_taxonomy({0, 1}, {2}, {3});
    const MetricsReport r = metrics(cm, tax);
    CHECK(r.acc_all == doctest::Approx(1.0));
    CHECK(r.acc_seen == doctest::Approx(1.0));
    REQUIRE(r.acc_lu.has_value());
    REQUIRE(r.acc_gu.has_value());
    REQUIRE(r.acc_au.has_value());
    CHECK(*r.acc_lu == doctest::Approx(1.0));
    CHECK(*r.acc_gu == doctest::Approx(1.0));
    CHECK(*r.acc_au == doctest::Approx(1.0));
    CHECK(*r.lu_gu_gap == doctest::Approx(0.0));
}

TEST_CASE("seen classes score by raw label while unseen classes are matched") {
    // seen class 0 correct 8/10; unseen class 1 concentrated on label 2,
    // unseen class 2 on label 1 — matching must uncross them
    const ConfusionMatrix cm = cm_from(3, {
        8, 1, 1,
        0, 0, 10,
        0, 10, 0,
    });
    const ClassTaxonomy tax = split_taxonomy({0}, {1}, {2});
    const MetricsReport r = metrics(cm, tax);
    CHECK(r.acc_seen == doctest::Approx(0.8));
    CHECK(*r.acc_lu == doctest::Approx(1.0));
    CHECK(*r.acc_gu == doctest::Approx(1.0));
    CHECK(*r.acc_au == doctest::Approx(1.0));
    CHECK(r.acc_all == doctest::Approx(28.0 / 30.0));
    CHECK(r.matching.at(2) == 1);
    CHECK(r.matching.at(1) == 2);
}

TEST_CASE("a collapsed predictor forces the second-best assignment") {
    // both unseen classes predict label 1 only; one of them must settle for
    // nothing, so all-unseen accuracy is strictly below the better share
    const ConfusionMatrix cm = cm_from(3, {
        10, 0, 0,
        0, 7, 0,
        0, 5, 0,
    });
    const ClassTaxonomy tax = split_taxonomy({0}, {1}, {2});
    const MetricsReport r = metrics(cm, tax);
    REQUIRE(r.acc_au.has_value());
    CHECK(*r.acc_au == doctest::Approx(7.0 / 12.0));
    CHECK(*r.acc_au < std::max(*r.acc_lu, *r.acc_gu));
    CHECK(*r.acc_lu == doctest::Approx(1.0));
    CHECK(*r.acc_gu == doctest::Approx(0.0));
    CHECK(*r.lu_gu_gap == doctest::Approx(1.0));
}

TEST_CASE("joint matching keeps all-unseen accuracy consistent but unforced") {
    // AU reads off the same joint matching as LU and GU; with equal test
    // masses it lands between them
    const ConfusionMatrix cm = cm_from(4, {
        10, 0, 0, 0,
        0, 10, 0, 0,
        0, 0, 8, 2,
        0, 0, 4, 6,
    });
    const ClassTaxonomy tax = split_taxonomy({0, 1}, {2}, {3});
    const MetricsReport r = metrics(cm, tax);
    CHECK(*r.acc_lu == doctest::Approx(0.8));
    CHECK(*r.acc_gu == doctest::Approx(0.6));
    CHECK(*r.acc_au == doctest::Approx(0.7));
    CHECK(*r.lu_gu_gap == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("relabeling the unseen outputs changes nothing") {
    Rng r(17);
    // random confusion over 2 seen + 3 unseen classes
    ConfusionMatrix cm;
    cm.counts = Matrix(5, 5);
    for (size_t i = 0; i < cm.counts.size(); ++i)
        cm.counts.data()[i] = std::floor(10.0 * r.uniform01());
    // anchor the seen rows so seen labels stay seen under the permutation
    cm.counts(0, 0) += 25.0;
    cm.counts(1, 1) += 25.0;
    const ClassTaxonomy tax = split_taxonomy({0, 1}, {2}, {3, 4});
    const MetricsReport base = metrics(cm, tax);

    std::vector<int> perm{2, 3, 4};
    std::sort(perm.begin(), perm.end());
    int checked = 0;
    do {
        ConfusionMatrix shuffled;
        shuffled.counts = Matrix(5, 5);
        for (int c = 0; c < 5; ++c) {
            shuffled.counts(c, 0) = cm.counts(c, 0);
            shuffled.counts(c, 1) = cm.counts(c, 1);
            for (int j = 0; j < 3; ++j)
                shuffled.counts(c, perm[static_cast<size_t>(j)]) = cm.counts(c, 2 + j);
        }
        const MetricsReport got = metrics(shuffled, tax);
        CHECK(*got.acc_au == doctest::Approx(*base.acc_au).epsilon(1e-12));
        CHECK(*got.acc_lu == doctest::Approx(*base.acc_lu).epsilon(1e-12));
        CHECK(*got.acc_gu == doctest::Approx(*base.acc_gu).epsilon(1e-12));
        ++checked;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(checked == 6);
}

TEST_CASE("absent unseen partitions leave their accuracies unset") {
    ConfusionMatrix cm;
    cm.counts = Matrix(2, 2);
    cm.counts(0, 0) = 9.0;
    cm.counts(0, 1) = 1.0;
    cm.counts(1, 1) = 10.0;
    ClassTaxonomy tax;
    tax.seen = {0, 1};
    tax.locally_unseen.resize(2);
    tax.globally_unseen.resize(2);
    const MetricsReport r = metrics(cm, tax);
    CHECK(r.acc_seen == doctest::Approx(0.95));
    CHECK(r.acc_all == doctest::Approx(0.95));
    CHECK(!r.acc_lu.has_value());
    CHECK(!r.acc_gu.has_value());
    CHECK(!r.acc_au.has_value());
    CHECK(!r.lu_gu_gap.has_value());
}

TEST_CASE("gu-only benchmarks report a gu accuracy but no gap") {
    const ConfusionMatrix cm = cm_from(2, {10, 0, 0, 10});
    ClassTaxonomy tax;
    tax.seen = {0};
    tax.locally_unseen.resize(1);
    tax.globally_unseen.resize(1);
    tax.globally_unseen[0] = {1};
    const MetricsReport r = metrics(cm, tax);
    CHECK(!r.acc_lu.has_value());
    REQUIRE(r.acc_gu.has_value());
    CHECK(*r.acc_gu == doctest::Approx(1.0));
    CHECK(!r.lu_gu_gap.has_value());
}

TEST_CASE("gap report tracks rounds and picks the best by all-class accuracy") {
    std::vector<MetricsReport> rounds(4);
    rounds[0].acc_all = 0.50;
    rounds[0].lu_gu_gap = 0.4;
    rounds[1].acc_all = 0.80;
    rounds[1].lu_gu_gap = 0.3;
    rounds[2].acc_all = 0.80; // tie with round 1: earliest wins
    rounds[2].lu_gu_gap = -0.2;
    rounds[3].acc_all = 0.70;
    rounds[3].lu_gu_gap = 0.1;
    const GapReport g = gap_report(rounds);
    REQUIRE(g.per_round.size() == 4);
    CHECK(*g.per_round[0] == doctest::Approx(0.4));
    CHECK(*g.per_round[2] == doctest::Approx(-0.2));
    REQUIRE(g.at_best_round.has_value());
    CHECK(*g.at_best_round == doctest::Approx(0.3));
}

TEST_CASE("gap report passes through absent gaps") {
    std::vector<MetricsReport> rounds(2);
    rounds[0].acc_all = 0.9;
    rounds[1].acc_all = 0.2;
    const GapReport g = gap_report(rounds);
    CHECK(!g.per_round[0].has_value());
    CHECK(!g.per_round[1].has_value());
    CHECK(!g.at_best_round.has_value());
    CHECK(gap_report({}).per_round.empty());
}

TEST_CASE("monotone gap inputs give a monotone series") {
    std::vector<MetricsReport> rounds(5);
    for (int i = 0; i < 5; ++i) {
        rounds[static_cast<size_t>(i)].acc_all = 0.1 * i;
        rounds[static_cast<size_t>(i)].lu_gu_gap = 0.5 - 0.1 * i;
    }
    const GapReport g = gap_report(rounds);
    for (size_t i = 1; i < g.per_round.size(); ++i)
        CHECK(*g.per_round[i] < *g.per_round[i - 1]);
}
