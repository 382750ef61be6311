#pragma once

// Seeded synthetic data shared by unit and acceptance tests.

#include "urgency/embedding_store.hpp"
#include "urgency/rng.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fixture {

struct Blobs {
    Eigen::MatrixXd x;
    std::vector<int> truth;
};

// `per` points around each center with isotropic noise `sigma`.
inline Blobs blobs(const Eigen::MatrixXd& centers, int per, double sigma, std::uint64_t seed) {
    urgency::Rng rng(seed);
    Blobs b;
    b.x.resize(centers.rows() * per, centers.cols());
    for (Eigen::Index c = 0; c < centers.rows(); ++c)
        for (int i = 0; i < per; ++i) {
            const auto row = c * per + i;
            for (Eigen::Index d = 0; d < centers.cols(); ++d) b.x(row, d) = centers(c, d) + sigma * rng.normal();
            b.truth.push_back(static_cast<int>(c));
        }
    return b;
}

// n = 90, sigma = 0.05, pairwise center distances 5, 5 and 7.07.
inline Blobs three_blobs(std::uint64_t seed = 3) {
    Eigen::MatrixXd centers(3, 2);
    centers << 0, 0, 5, 0, 0, 5;
    return blobs(centers, 30, 0.05, seed);
}

inline Blobs two_blobs(std::uint64_t seed = 2) {
    Eigen::MatrixXd centers(2, 2);
    centers << 0, 0, 6, 0;
    return blobs(centers, 30, 0.05, seed);
}

// 150 points in 50 dimensions: three overlapping Gaussian clusters.
inline Blobs dec_fixture(std::uint64_t seed = 150) {
    urgency::Rng rng(seed);
    Eigen::MatrixXd centers(3, 50);
    for (Eigen::Index j = 0; j < 50; ++j)
        for (Eigen::Index i = 0; i < 3; ++i) centers(i, j) = 0.6 * rng.normal();
    return blobs(centers, 50, 1.0, urgency::derive_seed(seed, 1));
}

struct Sequences {
    urgency::TokenSequenceSet set;
    urgency::LabelTable labels;
};

// Noise tokens plus one marker token per sequence whose direction names the
// class, so a single token pattern separates the classes.
inline Sequences separable_sequences(int per_class, std::uint32_t dim = 12, std::uint64_t seed = 60) {
    urgency::Rng rng(seed);
    Sequences out;
    out.set.dim = dim;
    for (int i = 0; i < 3 * per_class; ++i) {
        const int label = i % 3;
        const auto len = static_cast<Eigen::Index>(3 + rng.below(6));
        Eigen::MatrixXd seq(len, dim);
        for (Eigen::Index k = 0; k < seq.size(); ++k) seq.data()[k] = 0.3 * rng.normal();
        seq.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(len)))) (label) += 3.0;
        const std::string id = "q" + std::to_string(i);
        out.set.ids.push_back(id);
        out.set.sequences.push_back(seq);
        out.set.original_lengths.push_back(static_cast<std::uint32_t>(len));
        out.labels.set(id, label, urgency::Provenance::delphi);
    }
    return out;
}

} // namespace fixture
