#include "urgency/kmeans.hpp"

#include "urgency/error.hpp"
#include "urgency/rng.hpp"
#include "urgency/validity.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace urgency {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

MatrixXd plus_plus_seeds(const MatrixXd& x, int k, Rng& rng) {
    const Index n = x.rows();
    MatrixXd centers(k, x.cols());
    centers.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd closest(n);
    for (Index i = 0; i < n; ++i) closest(i) = (x.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = closest.sum();
        Index pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double cumulative = 0.0;
            pick = n - 1;
            for (Index i = 0; i < n; ++i) {
                cumulative += closest(i);
                if (cumulative > target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centers.row(c) = x.row(pick);
        for (Index i = 0; i < n; ++i) closest(i) = std::min(closest(i), (x.row(i) - centers.row(c)).squaredNorm());
    }
    return centers;
}

// Moves the point farthest from its centroid (taken from clusters that can
// spare one) into each empty cluster and centres that cluster on it.
void repair_empty(const MatrixXd& x, MatrixXd& centroids, std::vector<int>& labels) {
    const int k = static_cast<int>(centroids.rows());
    std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    for (int c = 0; c < k; ++c) {
        if (sizes[static_cast<std::size_t>(c)] > 0) continue;
        Index far = -1;
        double far_dist = -1.0;
        for (Index i = 0; i < x.rows(); ++i) {
            const int own = labels[static_cast<std::size_t>(i)];
            if (sizes[static_cast<std::size_t>(own)] < 2) continue;
            const double d = (x.row(i) - centroids.row(own)).squaredNorm();
            if (d > far_dist) {
                far_dist = d;
                far = i;
            }
        }
        if (far < 0) throw Error(ErrorKind::size, "cannot repair empty cluster: no cluster has a point to spare");
        --sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
        labels[static_cast<std::size_t>(far)] = c;
        ++sizes[static_cast<std::size_t>(c)];
        centroids.row(c) = x.row(far);
    }
}

MatrixXd centroid_update(const MatrixXd& x, const std::vector<int>& labels, int k) {
    MatrixXd sums = MatrixXd::Zero(k, x.cols());
    std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < x.rows(); ++i) {
        const int l = labels[static_cast<std::size_t>(i)];
        sums.row(l) += x.row(i);
        ++sizes[static_cast<std::size_t>(l)];
    }
    for (int c = 0; c < k; ++c) sums.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    return sums;
}

KmeansModel lloyd(const MatrixXd& x, MatrixXd centroids, int max_iter) {
    const int k = static_cast<int>(centroids.rows());
    KmeansModel m;
    m.k = k;
    std::vector<int> labels;
    for (int it = 0; it < std::max(max_iter, 1); ++it) {
        auto next = nearest_centroid(centroids, x);
        repair_empty(x, centroids, next);
        if (it > 0 && next == labels) break;
        labels = std::move(next);
        centroids = centroid_update(x, labels, k);
        const double current = inertia(x, centroids, labels);
        if (!m.inertia_history.empty() && current > m.inertia_history.back() * (1.0 + 1e-12) + 1e-12)
            throw Error(ErrorKind::data, "inertia increased during Lloyd iteration " + std::to_string(it));
        m.inertia_history.push_back(current);
        m.iterations_run = it + 1;
    }
    m.centroids = std::move(centroids);
    m.assignments = std::move(labels);
    m.inertia = inertia(x, m.centroids, m.assignments);
    return m;
}

} // namespace

std::vector<int> nearest_centroid(const MatrixXd& centroids, const MatrixXd& x) {
    if (x.cols() != centroids.cols())
        throw Error(ErrorKind::shape, "points have dimension " + std::to_string(x.cols()) + ", centroids " +
                                          std::to_string(centroids.cols()));
    std::vector<int> labels(static_cast<std::size_t>(x.rows()));
    for (Index i = 0; i < x.rows(); ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index c = 0; c < centroids.rows(); ++c) {
            const double d = (x.row(i) - centroids.row(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

std::vector<int> assign(const KmeansModel& model, const MatrixXd& x) { return nearest_centroid(model.centroids, x); }

double inertia(const MatrixXd& x, const MatrixXd& centroids, std::span<const int> labels) {
    double total = 0.0;
    for (Index i = 0; i < x.rows(); ++i) total += (x.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    return total;
}

KmeansModel kmeans_fit(const MatrixXd& x, int k, std::uint64_t seed, KmeansOptions options) {
    if (k < 1) throw Error(ErrorKind::domain, "k must be at least 1");
    if (x.rows() < k)
        throw Error(ErrorKind::size, "k = " + std::to_string(k) + " exceeds the " + std::to_string(x.rows()) + " points");
    if (options.n_init < 1) throw Error(ErrorKind::domain, "n_init must be at least 1");
    Rng rng(seed);
    KmeansModel best;
    bool have = false;
    for (int r = 0; r < options.n_init; ++r) {
        auto model = lloyd(x, plus_plus_seeds(x, k, rng), options.max_iter);
        if (!have || model.inertia < best.inertia) {
            best = std::move(model);
            have = true;
        }
    }
    best.seed = seed;
    return best;
}

SilhouetteScan silhouette_scan(const MatrixXd& x, int k_min, int k_max, std::uint64_t seed, KmeansOptions options) {
    if (k_min < 2 || k_max < k_min) throw Error(ErrorKind::domain, "empty or invalid k range");
    if (x.rows() < k_max + 1)
        throw Error(ErrorKind::size, "silhouette scan up to k = " + std::to_string(k_max) + " needs at least " +
                                         std::to_string(k_max + 1) + " points");
    const MatrixXd dist = pairwise_distances(x);
    SilhouetteScan scan;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = k_min; k <= k_max; ++k) {
        const auto model = kmeans_fit(x, k, seed, options);
        const double s = silhouette_from_distances(dist, model.assignments);
        scan.ks.push_back(k);
        scan.scores.push_back(s);
        if (s > best) {
            best = s;
            scan.chosen_k = k;
        }
    }
    return scan;
}

std::vector<int> align_labels(std::span<const int> reference, std::span<const int> labels, int k) {
    if (reference.size() != labels.size()) throw Error(ErrorKind::shape, "align_labels: length mismatch");
    std::vector<std::vector<Index>> overlap(static_cast<std::size_t>(k), std::vector<Index>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k || reference[i] < 0 || reference[i] >= k)
            throw Error(ErrorKind::domain, "align_labels: label out of range");
        ++overlap[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(reference[i])];
    }
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    Index best_score = -1;
    do {
        Index score = 0;
        for (int c = 0; c < k; ++c) score += overlap[static_cast<std::size_t>(c)][static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
        if (score > best_score) {
            best_score = score;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = best[static_cast<std::size_t>(labels[i])];
    return out;
}

nlohmann::json to_json(const KmeansModel& model) {
    nlohmann::json centroids = nlohmann::json::array();
    for (Index r = 0; r < model.centroids.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(model.centroids.cols()));
        for (Index c = 0; c < model.centroids.cols(); ++c) row[static_cast<std::size_t>(c)] = model.centroids(r, c);
        centroids.push_back(row);
    }
    return {{"k", model.k},
            {"seed", model.seed},
            {"inertia", model.inertia},
            {"iterations_run", model.iterations_run},
            {"inertia_history", model.inertia_history},
            {"assignments", model.assignments},
            {"centroids", centroids}};
}

KmeansModel kmeans_from_json(const nlohmann::json& j) {
    KmeansModel m;
    m.k = j.at("k");
    m.seed = j.at("seed");
    m.inertia = j.at("inertia");
    m.iterations_run = j.at("iterations_run");
    m.inertia_history = j.at("inertia_history").get<std::vector<double>>();
    m.assignments = j.at("assignments").get<std::vector<int>>();
    const auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
    m.centroids.resize(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.centroids(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return m;
}

} // namespace urgency
