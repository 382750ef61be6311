#pragma once

#include "urgency/embedding_store.hpp"

#include <Eigen/Dense>

#include <filesystem>

namespace urgency {

// Linear projection onto the leading principal axes. Rows of `components`
// are orthonormal and ordered by decreasing explained variance.
struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;         // out_dim x in_dim
    Eigen::VectorXd explained_variance; // sample variance (n - 1 denominator)

    Eigen::Index in_dim() const { return components.cols(); }
    Eigen::Index out_dim() const { return components.rows(); }
};

// Each component's largest-magnitude entry is made positive so fits are
// portable across SVD backends.
PcaModel pca_fit(const EmbeddingMatrix& x, Eigen::Index out_dim);

EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& x);

// Reads an externally reduced file (e.g. a UMAP layout) and checks its width.
EmbeddingMatrix import_reduced(const std::filesystem::path& path, Eigen::Index expected_dim = 50);

void write_pca_model(const PcaModel& model, const std::filesystem::path& path);
PcaModel read_pca_model(const std::filesystem::path& path);

} // namespace urgency
