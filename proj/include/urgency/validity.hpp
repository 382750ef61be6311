#pragma once

#include "urgency/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace urgency {

// Labels renumbered 0..k-1 by rank among the distinct values, with cluster sizes.
struct ClusterIndex {
    std::vector<int> dense;
    std::vector<Eigen::Index> sizes;
    int k = 0;
};

inline ClusterIndex index_clusters(std::span<const int> labels) {
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    ClusterIndex out;
    out.k = static_cast<int>(distinct.size());
    out.sizes.assign(distinct.size(), 0);
    out.dense.reserve(labels.size());
    for (int l : labels) {
        const auto c = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), l) - distinct.begin());
        out.dense.push_back(c);
        ++out.sizes[static_cast<std::size_t>(c)];
    }
    return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
pairwise_distances(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = x.rows();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        d(j, j) = Scalar(0);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const Scalar v = (x.row(i) - x.row(j)).norm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

// Mean silhouette from a precomputed Euclidean distance matrix. Points in
// singleton clusters contribute 0.
template <typename Derived>
typename Derived::Scalar silhouette_from_distances(const Eigen::MatrixBase<Derived>& dist, std::span<const int> labels) {
    using Scalar = typename Derived::Scalar;
    const auto idx = index_clusters(labels);
    if (static_cast<Eigen::Index>(labels.size()) != dist.rows())
        throw Error(ErrorKind::shape, "silhouette: label count does not match point count");
    if (idx.k < 2) throw Error(ErrorKind::domain, "silhouette needs at least two clusters");
    const Eigen::Index n = dist.rows();
    std::vector<Scalar> sums(static_cast<std::size_t>(idx.k));
    Scalar total(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), Scalar(0));
        for (Eigen::Index j = 0; j < n; ++j) sums[static_cast<std::size_t>(idx.dense[j])] += dist(i, j);
        const auto own = static_cast<std::size_t>(idx.dense[static_cast<std::size_t>(i)]);
        if (idx.sizes[own] == 1) continue;
        const Scalar a = sums[own] / static_cast<Scalar>(idx.sizes[own] - 1);
        Scalar b = std::numeric_limits<Scalar>::infinity();
        for (std::size_t c = 0; c < sums.size(); ++c)
            if (c != own) b = std::min(b, sums[c] / static_cast<Scalar>(idx.sizes[c]));
        const Scalar denom = std::max(a, b);
        if (denom > Scalar(0)) total += (b - a) / denom;
    }
    return total / static_cast<Scalar>(n);
}

template <typename Derived>
typename Derived::Scalar silhouette_score(const Eigen::MatrixBase<Derived>& x, std::span<const int> labels) {
    return silhouette_from_distances(pairwise_distances(x), labels);
}

namespace detail {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
cluster_means(const Eigen::MatrixBase<Derived>& x, const ClusterIndex& idx) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> means =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(idx.k, x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) means.row(idx.dense[static_cast<std::size_t>(i)]) += x.row(i);
    for (int c = 0; c < idx.k; ++c) means.row(c) /= static_cast<Scalar>(idx.sizes[static_cast<std::size_t>(c)]);
    return means;
}

} // namespace detail

// Between/within dispersion ratio. Returns +infinity when the within-cluster
// sum of squares is zero.
template <typename Derived>
typename Derived::Scalar calinski_harabasz(const Eigen::MatrixBase<Derived>& x, std::span<const int> labels) {
    using Scalar = typename Derived::Scalar;
    const auto idx = index_clusters(labels);
    const Eigen::Index n = x.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n) throw Error(ErrorKind::shape, "calinski_harabasz: label count mismatch");
    if (idx.k < 2 || idx.k > n - 1) throw Error(ErrorKind::domain, "calinski_harabasz needs 2 <= k <= n-1");
    const auto means = detail::cluster_means(x, idx);
    const auto overall = x.colwise().mean();
    Scalar bss(0), wss(0);
    for (int c = 0; c < idx.k; ++c)
        bss += static_cast<Scalar>(idx.sizes[static_cast<std::size_t>(c)]) * (means.row(c) - overall).squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) wss += (x.row(i) - means.row(idx.dense[static_cast<std::size_t>(i)])).squaredNorm();
    if (wss == Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    return (bss / static_cast<Scalar>(idx.k - 1)) / (wss / static_cast<Scalar>(n - idx.k));
}

// Mean worst-case (S_i + S_j) / M_ij. Returns +infinity if two centroids coincide.
template <typename Derived>
typename Derived::Scalar davies_bouldin(const Eigen::MatrixBase<Derived>& x, std::span<const int> labels) {
    using Scalar = typename Derived::Scalar;
    const auto idx = index_clusters(labels);
    const Eigen::Index n = x.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n) throw Error(ErrorKind::shape, "davies_bouldin: label count mismatch");
    if (idx.k < 2 || idx.k > n) throw Error(ErrorKind::domain, "davies_bouldin needs 2 <= k <= n");
    const auto means = detail::cluster_means(x, idx);
    std::vector<Scalar> spread(static_cast<std::size_t>(idx.k), Scalar(0));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto c = idx.dense[static_cast<std::size_t>(i)];
        spread[static_cast<std::size_t>(c)] += (x.row(i) - means.row(c)).norm();
    }
    for (int c = 0; c < idx.k; ++c) spread[static_cast<std::size_t>(c)] /= static_cast<Scalar>(idx.sizes[static_cast<std::size_t>(c)]);
    Scalar total(0);
    for (int i = 0; i < idx.k; ++i) {
        Scalar worst(0);
        for (int j = 0; j < idx.k; ++j) {
            if (i == j) continue;
            const Scalar m = (means.row(i) - means.row(j)).norm();
            if (m == Scalar(0)) return std::numeric_limits<Scalar>::infinity();
            worst = std::max(worst, (spread[static_cast<std::size_t>(i)] + spread[static_cast<std::size_t>(j)]) / m);
        }
        total += worst;
    }
    return total / static_cast<Scalar>(idx.k);
}

struct ValidityReport {
    double silhouette = 0.0;
    double calinski_harabasz = 0.0;
    double davies_bouldin = 0.0;
    Eigen::Index n = 0;
    int k = 0;
};

template <typename Derived>
ValidityReport validity_report(const Eigen::MatrixBase<Derived>& x, std::span<const int> labels) {
    ValidityReport r;
    r.n = x.rows();
    r.k = index_clusters(labels).k;
    if (r.k < 2 || r.k > r.n - 1) throw Error(ErrorKind::domain, "validity indices need 2 <= k <= n-1");
    r.silhouette = static_cast<double>(silhouette_score(x, labels));
    r.calinski_harabasz = static_cast<double>(calinski_harabasz(x, labels));
    r.davies_bouldin = static_cast<double>(davies_bouldin(x, labels));
    return r;
}

} // namespace urgency
