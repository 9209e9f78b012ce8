#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "fedossl/clustering.hpp"
#include "fedossl/error.hpp"
#include "fedossl/matrix.hpp"
#include "fedossl/rng.hpp"

using namespace fedossl;

namespace {

Matrix make(int rows, int cols, std::initializer_list<double> vals) {
    Matrix m(rows, cols);
    int i = 0;
    for (double v : vals) m.data()[i++] = v;
    REQUIRE(i == rows * cols);
    return m;
}

Matrix random_points(uint64_t seed, int rows, int cols, double scale = 1.0) {
    Rng r(seed);
    Matrix x(rows, cols);
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = scale * r.normal();
    return x;
}

// three tight, well-separated 2-D blobs
Matrix blob_points(uint64_t seed, int per_blob) {
    Rng r(seed);
    const double cx[3] = {0.0, 20.0, 0.0};
    const double cy[3] = {0.0, 0.0, 20.0};
    Matrix x(3 * per_blob, 2);
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < per_blob; ++i) {
            x(b * per_blob + i, 0) = cx[b] + 0.3 * r.normal();
            x(b * per_blob + i, 1) = cy[b] + 0.3 * r.normal();
        }
    return x;
}

std::vector<int> cluster_sizes(const std::vector<int>& assignment, int L) {
    std::vector<int> n(static_cast<size_t>(L), 0);
    for (int a : assignment) {
        REQUIRE(a >= 0);
        REQUIRE(a < L);
        ++n[static_cast<size_t>(a)];
    }
    return n;
}

std::string temp_path(const char* stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

} // namespace

TEST_CASE("sinkhorn plan matches the reference solution on a 4x2 cost") {
    const Matrix cost = make(4, 2, {0.0, 1.0, 0.2, 0.8, 1.0, 0.1, 0.9, 0.3});
    const TransportPlan tp = sinkhorn_plan(cost, 0.1, 10000, 1e-12);
    REQUIRE(tp.converged);
    const double expect[4][2] = {
        {0.24998847568220709, 1.1524317780124777e-05},
        {0.2493723443355077, 6.2765566447956953e-04},
        {3.0380634217028364e-05, 0.24996961936579576},
        {6.0879934806817800e-04, 0.24939120065194455},
    };
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(std::abs(tp.plan(i, j) - expect[i][j]) < 1e-8);
}

TEST_CASE("sinkhorn marginals are uniform on random costs") {
    Rng r(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(r.uniform_int(30));
        const int L = 2 + static_cast<int>(r.uniform_int(6));
        Matrix cost(n, L);
        for (size_t i = 0; i < cost.size(); ++i) cost.data()[i] = r.uniform01();
        const TransportPlan tp = sinkhorn_plan(cost, 0.05, 5000, 1e-9);
        REQUIRE(tp.converged);
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int j = 0; j < L; ++j) {
                CHECK(tp.plan(i, j) >= 0.0);
                s += tp.plan(i, j);
            }
            CHECK(std::abs(s - 1.0 / n) < 1e-8);
        }
        for (int j = 0; j < L; ++j) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += tp.plan(i, j);
            CHECK(std::abs(s - 1.0 / L) < 1e-8);
        }
    }
}

TEST_CASE("a large regularizer flattens the plan toward uniform") {
    const Matrix cost = make(3, 2, {0.0, 5.0, 2.0, 1.0, 4.0, 0.5});
    const TransportPlan tp = sinkhorn_plan(cost, 200.0, 5000, 1e-10);
    REQUIRE(tp.converged);
    for (size_t i = 0; i < tp.plan.size(); ++i)
        CHECK(tp.plan.data()[i] == doctest::Approx(1.0 / 6.0).epsilon(0.02));
}

TEST_CASE("an exhausted iteration budget is reported, not hidden") {
    // generic random costs leave the column marginals off after one sweep
    Rng r(23);
    Matrix cost(7, 3);
    for (size_t i = 0; i < cost.size(); ++i) cost.data()[i] = r.uniform01();
    const TransportPlan tp = sinkhorn_plan(cost, 0.05, 1, 1e-15);
    CHECK(!tp.converged);
    CHECK(tp.iterations_used == 1);
}

TEST_CASE("sinkhorn rejects degenerate inputs") {
    CHECK_THROWS_AS(sinkhorn_plan(Matrix(), 0.1, 100, 1e-6), ConfigError);
    CHECK_THROWS_AS(sinkhorn_plan(Matrix(2, 2), -1.0, 100, 1e-6), ConfigError);
}

TEST_CASE("auto epsilon picks a twentieth of the median squared spacing") {
    const Matrix pts = make(4, 1, {0.0, 1.0, 3.0, 7.0});
    BalancedClusterOptions opts;
    opts.sinkhorn.epsilon = 0.0; // auto
    const ClusterResult res = balanced_cluster(pts, 2, opts);
    // pairwise squared distances {1,4,9,16,36,49}: median 12.5, scaled by 0.05
    CHECK(res.epsilon_used == doctest::Approx(0.625).epsilon(1e-15));
    // balanced split puts {0,1} together and {3,7} together
    CHECK(res.assignment[0] == res.assignment[1]);
    CHECK(res.assignment[2] == res.assignment[3]);
    CHECK(res.assignment[0] != res.assignment[2]);
}

TEST_CASE("an explicit epsilon is taken as given") {
    const Matrix pts = random_points(5, 12, 3);
    BalancedClusterOptions opts;
    opts.sinkhorn.epsilon = 0.37;
    const ClusterResult res = balanced_cluster(pts, 3, opts);
    CHECK(res.epsilon_used == 0.37);
}

TEST_CASE("balanced clusters never differ in size by more than one") {
    Rng r(9);
    for (int trial = 0; trial < 12; ++trial) {
        const int n = 5 + static_cast<int>(r.uniform_int(40));
        const int L = 2 + static_cast<int>(r.uniform_int(5));
        const Matrix pts = random_points(100 + static_cast<uint64_t>(trial), n, 4);
        const ClusterResult res = balanced_cluster(pts, L);
        const std::vector<int> sizes = cluster_sizes(res.assignment, L);
        const int lo = *std::min_element(sizes.begin(), sizes.end());
        const int hi = *std::max_element(sizes.begin(), sizes.end());
        CHECK(lo >= n / L);
        CHECK(hi <= (n + L - 1) / L);
    }
}

TEST_CASE("balanced clustering recovers separated blobs exactly") {
    const int per = 8;
    const Matrix pts = blob_points(21, per);
    const ClusterResult res = balanced_cluster(pts, 3);
    CHECK(res.all_converged);
    // each blob is one cluster: rows of a blob all share a label, three labels
    std::set<int> labels;
    for (int b = 0; b < 3; ++b) {
        const int lead = res.assignment[static_cast<size_t>(b * per)];
        labels.insert(lead);
        for (int i = 1; i < per; ++i)
            CHECK(res.assignment[static_cast<size_t>(b * per + i)] == lead);
    }
    CHECK(labels.size() == 3);
    // and each centroid sits on a blob center
    for (int c = 0; c < 3; ++c) {
        double best = 1e300;
        for (const auto& [cx, cy] :
             {std::pair{0.0, 0.0}, std::pair{20.0, 0.0}, std::pair{0.0, 20.0}}) {
            const double dx = res.centroids.centroids(c, 0) - cx;
            const double dy = res.centroids.centroids(c, 1) - cy;
            best = std::min(best, dx * dx + dy * dy);
        }
        CHECK(best < 0.5);
    }
}

TEST_CASE("the entropic objective never increases across lloyd rounds") {
    const Matrix pts = random_points(31, 30, 4);
    BalancedClusterOptions opts;
    opts.lloyd_rounds = 8;
    const ClusterResult res = balanced_cluster(pts, 5, opts);
    REQUIRE(!res.objective_trace.empty());
    CHECK(res.objective_trace.size() <= 8);
    for (size_t i = 1; i < res.objective_trace.size(); ++i)
        CHECK(res.objective_trace[i] <=
              res.objective_trace[i - 1] + 1e-9 * (1.0 + std::abs(res.objective_trace[i - 1])));
}

TEST_CASE("row order does not change the clustering") {
    const Matrix pts = random_points(41, 18, 3);
    const ClusterResult base = balanced_cluster(pts, 3);

    // reverse the rows
    Matrix rev(18, 3);
    for (int i = 0; i < 18; ++i)
        for (int j = 0; j < 3; ++j) rev(i, j) = pts(17 - i, j);
    const ClusterResult rres = balanced_cluster(rev, 3);

    // same partition of the same points: compare co-membership, which is
    // invariant to both row order and cluster numbering
    for (int a = 0; a < 18; ++a)
        for (int b = a + 1; b < 18; ++b) {
            const bool together = base.assignment[static_cast<size_t>(a)] ==
                                  base.assignment[static_cast<size_t>(b)];
            const bool rtogether = rres.assignment[static_cast<size_t>(17 - a)] ==
                                   rres.assignment[static_cast<size_t>(17 - b)];
            CHECK(together == rtogether);
        }
}

TEST_CASE("feature normalization clusters by direction, not magnitude") {
    // two directions, wildly different norms within each
    Matrix pts(6, 2);
    const double along_x[3] = {1.0, 5.0, 40.0};
    for (int i = 0; i < 3; ++i) {
        pts(i, 0) = along_x[i];
        pts(i, 1) = 0.01 * along_x[i];
        pts(3 + i, 0) = 0.01 * along_x[i];
        pts(3 + i, 1) = along_x[i];
    }
    BalancedClusterOptions opts;
    opts.normalize_features = true;
    const ClusterResult res = balanced_cluster(pts, 2, opts);
    CHECK(res.assignment[0] == res.assignment[1]);
    CHECK(res.assignment[1] == res.assignment[2]);
    CHECK(res.assignment[3] == res.assignment[4]);
    CHECK(res.assignment[4] == res.assignment[5]);
    CHECK(res.assignment[0] != res.assignment[3]);
}

TEST_CASE("balanced_cluster validates its arguments") {
    CHECK_THROWS_AS(balanced_cluster(Matrix(), 2), ConfigError);
    CHECK_THROWS_AS(balanced_cluster(random_points(1, 4, 2), 0), ConfigError);
    CHECK_THROWS_AS(balanced_cluster(random_points(1, 4, 2), 5), ConfigError);
}

TEST_CASE("local sets aggregate into global centroids at the shared centers") {
    CentroidSet a;
    a.centroids = make(2, 2, {0.0, 0.0, 10.0, 0.0});
    a.client_id = 0;
    CentroidSet b;
    b.centroids = make(2, 2, {0.2, 0.0, 9.8, 0.0});
    b.client_id = 1;

    const CentroidSet g = aggregate_global_centroids({a, b}, 2);
    CHECK(g.origin == CentroidSet::Origin::kGlobal);
    CHECK(g.client_id == -1);
    REQUIRE(g.count() == 2);
    REQUIRE(g.dim() == 2);
    // one global near x=0.1, the other near x=9.9
    const double x0 = std::min(g.centroids(0, 0), g.centroids(1, 0));
    const double x1 = std::max(g.centroids(0, 0), g.centroids(1, 0));
    CHECK(x0 == doctest::Approx(0.1).epsilon(0.2));
    CHECK(x1 == doctest::Approx(9.9).epsilon(0.02));
}

TEST_CASE("aggregation keeps centroid identities aligned to a reference set") {
    CentroidSet a;
    a.centroids = make(2, 2, {0.0, 10.0, 10.0, 0.0});
    a.client_id = 0;
    CentroidSet b;
    b.centroids = make(2, 2, {0.0, 9.6, 9.6, 0.0});
    b.client_id = 1;

    const CentroidSet plain = aggregate_global_centroids({a, b}, 2);
    CentroidSet ref = plain; // the previous round, with the rows swapped
    for (int j = 0; j < 2; ++j) {
        ref.centroids(0, j) = plain.centroids(1, j);
        ref.centroids(1, j) = plain.centroids(0, j);
    }

    // aligned aggregation permutes the same centroids into the ref's order
    const CentroidSet aligned = aggregate_global_centroids({a, b}, 2, {}, &ref);
    for (int j = 0; j < 2; ++j) {
        CHECK(aligned.centroids(0, j) == ref.centroids(0, j));
        CHECK(aligned.centroids(1, j) == ref.centroids(1, j));
    }

    // a reference of a different shape is ignored rather than obeyed
    CentroidSet odd;
    odd.centroids = make(3, 2, {0.0, 0.0, 1.0, 1.0, 2.0, 2.0});
    const CentroidSet unaligned = aggregate_global_centroids({a, b}, 2, {}, &odd);
    for (int j = 0; j < 2; ++j) {
        CHECK(unaligned.centroids(0, j) == plain.centroids(0, j));
        CHECK(unaligned.centroids(1, j) == plain.centroids(1, j));
    }
}

TEST_CASE("aggregation rejects mismatched or empty uploads") {
    CentroidSet a;
    a.centroids = make(2, 2, {0.0, 0.0, 1.0, 0.0});
    CentroidSet bad;
    bad.centroids = make(2, 3, {0.0, 0.0, 0.0, 1.0, 0.0, 0.0});
    CHECK_THROWS_AS(aggregate_global_centroids({}, 2), ProtocolError);
    CHECK_THROWS_AS(aggregate_global_centroids({a, bad}, 2), ProtocolError);
}

TEST_CASE("plain kmeans recovers blob centers and fills every cluster") {
    const Matrix pts = blob_points(51, 10);
    const ClusterResult res = kmeans_cluster(pts, 3);
    const std::vector<int> sizes = cluster_sizes(res.assignment, 3);
    for (int s : sizes) CHECK(s == 10);
}

TEST_CASE("kmeans reseeds emptied clusters instead of dropping them") {
    // two tight far-apart pairs, three clusters requested: one cluster must
    // split a pair rather than vanish
    const Matrix pts = make(4, 1, {0.0, 0.001, 100.0, 100.001});
    const ClusterResult res = kmeans_cluster(pts, 3);
    const std::vector<int> sizes = cluster_sizes(res.assignment, 3);
    for (int s : sizes) CHECK(s >= 1);
}

TEST_CASE("anonymity parameter is the average upload mass") {
    CHECK(anonymity_parameter(100, 4) == doctest::Approx(25.0));
    CHECK(anonymity_parameter(7, 2) == doctest::Approx(3.5));
}

TEST_CASE("centroid dumps carry the round and every coordinate") {
    CentroidSet s;
    s.centroids = make(2, 2, {1.5, -2.0, 0.25, 4.0});
    s.origin = CentroidSet::Origin::kGlobal;
    const std::string path = temp_path("fedossl_centroids_test.txt");
    write_centroids(path, s, 7);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    CHECK(text.find("7") != std::string::npos);
    CHECK(text.find("1.5") != std::string::npos);
    CHECK(text.find("-2") != std::string::npos);
    std::remove(path.c_str());
}
