#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "urgency/kmeans.hpp"

#include <algorithm>

using namespace urgency;
using testutil::error_kind;

TEST_CASE("four points on a line, k = 2") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 10, 11;
    const auto m = kmeans_fit(x, 2, 7);
    CHECK(m.inertia == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> c{m.centroids(0, 0), m.centroids(1, 0)};
    std::sort(c.begin(), c.end());
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(10.5));
    CHECK(m.assignments[0] == m.assignments[1]);
    CHECK(m.assignments[2] == m.assignments[3]);
    CHECK(m.assignments[0] != m.assignments[2]);
}

TEST_CASE("k = 1 is the mean and k = n has zero inertia") {
    Rng rng(4);
    Eigen::MatrixXd x(9, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const auto one = kmeans_fit(x, 1, 1);
    CHECK((one.centroids.row(0) - x.colwise().mean()).norm() < 1e-12);
    CHECK(one.inertia == doctest::Approx((x.rowwise() - x.colwise().mean()).squaredNorm()).epsilon(1e-12));
    const auto all = kmeans_fit(x, 9, 1);
    CHECK(all.inertia == doctest::Approx(0.0));
}

TEST_CASE("assign breaks ties toward the lower index and matches fit") {
    Eigen::MatrixXd c(2, 1);
    c << -1, 1;
    Eigen::MatrixXd p(3, 1);
    p << 0, -0.5, 0.7;
    CHECK(nearest_centroid(c, p) == std::vector<int>{0, 0, 1});

    const auto b = fixture::three_blobs();
    const auto m = kmeans_fit(b.x, 3, 11);
    CHECK(assign(m, b.x) == m.assignments);
    CHECK(inertia(b.x, m.centroids, m.assignments) == doctest::Approx(m.inertia).epsilon(1e-12));
}

TEST_CASE("inertia never increases across Lloyd iterations") {
    Rng rng(8);
    Eigen::MatrixXd x(60, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const auto m = kmeans_fit(x, 5, 2);
    REQUIRE(!m.inertia_history.empty());
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i) CHECK(m.inertia_history[i] <= m.inertia_history[i - 1] + 1e-12);
}

TEST_CASE("restarts reach the exhaustive optimum on small inputs") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + static_cast<int>(rng.below(4));
        const int k = 2 + static_cast<int>(rng.below(2));
        Eigen::MatrixXd x(n, 2);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
        const double best = oracle::optimal_sse(oracle::to_points(x), k);
        const auto m = kmeans_fit(x, k, 100 + trial, {.n_init = 50});
        CHECK(m.inertia == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("silhouette scan recovers the number of blobs") {
    const auto three = silhouette_scan(fixture::three_blobs().x, 2, 9, 5);
    CHECK(three.chosen_k == 3);
    CHECK(three.ks.size() == 8);
    const auto two = silhouette_scan(fixture::two_blobs().x, 2, 9, 5);
    CHECK(two.chosen_k == 2);
}

TEST_CASE("deterministic given the seed") {
    const auto b = fixture::three_blobs(9);
    const auto a = kmeans_fit(b.x, 4, 99);
    const auto c = kmeans_fit(b.x, 4, 99);
    CHECK(a.assignments == c.assignments);
    CHECK(a.centroids == c.centroids);
    CHECK(a.inertia == c.inertia);
}

TEST_CASE("align_labels finds the best permutation") {
    const std::vector<int> ref{0, 0, 1, 1, 2, 2};
    const std::vector<int> lab{2, 2, 0, 0, 1, 0};
    CHECK(align_labels(ref, lab, 3) == std::vector<int>{0, 0, 1, 1, 2, 1});
    CHECK(error_kind([&] { align_labels(ref, std::vector<int>{0, 1}, 3); }) == ErrorKind::shape);
    CHECK(error_kind([&] { align_labels(ref, std::vector<int>{0, 0, 0, 0, 0, 5}, 3); }) == ErrorKind::domain);
}

TEST_CASE("model JSON round trip") {
    const auto b = fixture::two_blobs();
    const auto m = kmeans_fit(b.x, 2, 3);
    const auto back = kmeans_from_json(nlohmann::json::parse(to_json(m).dump()));
    CHECK(back.k == 2);
    CHECK(back.centroids == m.centroids);
    CHECK(back.assignments == m.assignments);
    CHECK(back.inertia == m.inertia);
    CHECK(back.seed == m.seed);
}

TEST_CASE("argument errors") {
    Eigen::MatrixXd x(3, 1);
    x << 0, 1, 2;
    CHECK(error_kind([&] { kmeans_fit(x, 0, 1); }) == ErrorKind::domain);
    CHECK(error_kind([&] { kmeans_fit(x, 4, 1); }) == ErrorKind::size);
    CHECK(error_kind([&] { kmeans_fit(x, 2, 1, {.n_init = 0}); }) == ErrorKind::domain);
    CHECK(error_kind([&] { silhouette_scan(x, 1, 2, 1); }) == ErrorKind::domain);
    CHECK(error_kind([&] { silhouette_scan(x, 2, 5, 1); }) == ErrorKind::size);
    Eigen::MatrixXd wide(2, 2);
    wide.setZero();
    const auto m = kmeans_fit(x, 2, 1);
    CHECK(error_kind([&] { assign(m, wide); }) == ErrorKind::shape);
}
