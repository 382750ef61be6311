#pragma once

#include "urgency/classifier.hpp"
#include "urgency/dec.hpp"
#include "urgency/delphi.hpp"
#include "urgency/kmeans.hpp"
#include "urgency/manifest.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace urgency {

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path corpus;
    std::filesystem::path preprocess_dir; // empty: no lists
    std::string specialty = "Surgery";
    std::filesystem::path embeddings;     // raw document vectors
    std::filesystem::path sequences;      // token sequences for the classifier
    std::string reduce_method = "pca";    // pca | import
    std::filesystem::path reduced_import; // used by import
    int reduce_dim = 50;
    int scan_kmin = 2;
    int scan_kmax = 9;
    int k = 3;
    KmeansOptions kmeans{};
    DecConfig dec{};
    // Cluster id -> urgency label, applied to both machine label sets.
    std::array<int, kNumClasses> cluster_to_label{0, 1, 2};
    std::string session_id = "review";
    double review_fraction = 0.2;
    std::vector<delphi::ExpertSpec> experts;
    double train_fraction = 0.8;
    clf::TrainConfig classifier{};
    int cv_folds = 0; // 0 skips cross-validation

    nlohmann::json snapshot() const;
};

// Relative paths resolve against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig read_pipeline_config(const std::filesystem::path& path);

struct RunOutcome {
    RunManifest manifest;
    bool paused = false;                // waiting for expert submissions
    std::vector<std::string> executed;  // stages computed in this call
    std::vector<std::string> reused;    // stages whose recorded outputs still match
};

inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages = {"preprocess", "reduce",   "scan-k",         "cluster-kmeans",
                                                    "cluster-dec", "validity", "delphi-sample", "delphi-finalize",
                                                    "train",       "evaluate"};
    return stages;
}

// Runs or resumes the pipeline in `workdir`. A stage is skipped when its last
// successful record has the same config and input digests and its outputs
// are still on disk unchanged. Stops after delphi-finalize records a pause
// if some expert has not submitted; call again once they have.
RunOutcome run_pipeline(const PipelineConfig& config, const std::filesystem::path& workdir);

std::filesystem::path session_store_dir(const std::filesystem::path& workdir);

// Maps cluster ids through `cluster_to_label`.
LabelTable label_clusters(const std::vector<std::string>& ids, std::span<const int> clusters,
                          const std::array<int, kNumClasses>& cluster_to_label, Provenance provenance);

struct DecModel {
    Autoencoder autoencoder;
    Eigen::MatrixXd centers;
};

DecModel read_dec_checkpoint(const std::filesystem::path& path);

} // namespace urgency
