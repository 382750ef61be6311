#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace urgency {

struct KmeansOptions {
    int n_init = 10;
    int max_iter = 300;
};

struct KmeansModel {
    int k = 0;
    Eigen::MatrixXd centroids; // k x d
    std::vector<int> assignments;
    double inertia = 0.0;
    int iterations_run = 0;
    std::uint64_t seed = 0;
    // Inertia after each Lloyd iteration of the winning restart.
    std::vector<double> inertia_history;
};

// Best of n_init kmeans++ restarts drawn from one seeded stream.
KmeansModel kmeans_fit(const Eigen::MatrixXd& x, int k, std::uint64_t seed, KmeansOptions options = {});

// Nearest centroid by squared Euclidean distance, ties to the lowest index.
std::vector<int> assign(const KmeansModel& model, const Eigen::MatrixXd& x);
std::vector<int> nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& x);

double inertia(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centroids, std::span<const int> labels);

struct SilhouetteScan {
    std::vector<int> ks;
    std::vector<double> scores;
    int chosen_k = 0;
};

// Argmax of mean silhouette over k in [k_min, k_max], ties to the smaller k.
SilhouetteScan silhouette_scan(const Eigen::MatrixXd& x, int k_min, int k_max, std::uint64_t seed, KmeansOptions options = {});

// Permutes cluster ids in `labels` to agree with `reference` as often as
// possible (exhaustive over permutations; first best permutation wins).
std::vector<int> align_labels(std::span<const int> reference, std::span<const int> labels, int k);

nlohmann::json to_json(const KmeansModel& model);
KmeansModel kmeans_from_json(const nlohmann::json& j);

} // namespace urgency
